//! Teacher-forced token scoring against a completions-style HTTP endpoint,
//! plus plumbing for precomputed log-probabilities.
//!
//! Each step `t` is scored with one request whose prompt is
//! `question + sep + step_1 + sep + ... + step_t`, echoed back with zero
//! generated tokens. Tokens are attributed to step `t` by character offset;
//! a token that straddles the start of step `t` belongs to step `t`.
//!
//! Responses are cached under `<cache_dir>/<model>/<sha256(prompt)>.json`,
//! where `<model>` has path-hostile characters replaced by `_`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trace::Trace;

pub const API_KEY_ENV: &str = "IFTRACK_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub max_parallel_requests: usize,
    pub retry_limit: u32,
    pub timeout_secs: f64,
    /// Inserted between the question and each step.
    pub separator: String,
    pub cache_dir: Option<PathBuf>,
    /// First retry waits this long, doubling each attempt.
    pub backoff_secs: f64,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            endpoint_url: "http://127.0.0.1:8000/v1/completions".into(),
            model_name: "encoder".into(),
            max_parallel_requests: 4,
            retry_limit: 2,
            timeout_secs: 60.0,
            separator: "\n".into(),
            cache_dir: None,
            backoff_secs: 0.5,
            api_key: None,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_parallel_requests == 0 {
            return Err(Error::invalid("max_parallel_requests must be at least 1"));
        }
        if !(self.timeout_secs > 0.0) || !self.backoff_secs.is_finite() || self.backoff_secs < 0.0 {
            return Err(Error::invalid("timeout must be positive and backoff non-negative"));
        }
        if self.endpoint_url.is_empty() || self.model_name.is_empty() {
            return Err(Error::invalid("endpoint_url and model_name are required"));
        }
        Ok(())
    }

    /// Fills `api_key` from the environment when unset.
    pub fn with_env_key(mut self) -> Self {
        if self.api_key.is_none() {
            self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSpan {
    pub step_index: i64,
    pub token_logprobs: Vec<f64>,
    pub token_count: usize,
}

impl ScoredSpan {
    pub fn new(step_index: i64, token_logprobs: Vec<f64>) -> Self {
        let token_count = token_logprobs.len();
        ScoredSpan {
            step_index,
            token_logprobs,
            token_count,
        }
    }

    fn check(&self) -> Result<()> {
        if self.token_logprobs.is_empty() {
            return Err(Error::Scoring(format!(
                "empty logprob array for step {}",
                self.step_index
            )));
        }
        if self.token_count != self.token_logprobs.len() {
            return Err(Error::Scoring(format!(
                "step {}: token_count {} but {} log-probs",
                self.step_index,
                self.token_count,
                self.token_logprobs.len()
            )));
        }
        if let Some(lp) = self.token_logprobs.iter().find(|lp| !(**lp <= 0.0)) {
            return Err(Error::Scoring(format!(
                "step {}: log-prob {lp} is not <= 0",
                self.step_index
            )));
        }
        Ok(())
    }
}

/// Prompt for scoring step `pos` (0-based) and the byte offset where that
/// step's text begins.
pub fn step_prompt(trace: &Trace, pos: usize, separator: &str) -> (String, usize) {
    let mut prompt = trace.question.clone();
    for step in &trace.steps[..pos] {
        prompt.push_str(separator);
        prompt.push_str(&step.text);
    }
    prompt.push_str(separator);
    let start = prompt.len();
    prompt.push_str(&trace.steps[pos].text);
    (prompt, start)
}

/// Log-probs of the echoed tokens whose end lies past `start`.
pub fn align_step(prompt: &str, start: usize, tokens: &[String], logprobs: &[Option<f64>]) -> Result<Vec<f64>> {
    if tokens.len() != logprobs.len() {
        return Err(Error::Alignment(format!(
            "{} tokens but {} log-probs",
            tokens.len(),
            logprobs.len()
        )));
    }
    let echoed: String = tokens.concat();
    if echoed != prompt {
        return Err(Error::Alignment(format!(
            "echoed text ({} bytes) does not reconstruct the prompt ({} bytes)",
            echoed.len(),
            prompt.len()
        )));
    }
    let mut out = Vec::new();
    let mut offset = 0;
    for (k, (tok, lp)) in tokens.iter().zip(logprobs).enumerate() {
        let begin = offset;
        offset += tok.len();
        if offset <= start || tok.is_empty() {
            continue;
        }
        if begin < start {
            log::debug!("token {k} {tok:?} spans the step boundary at byte {start}; assigned to the step");
        }
        let lp = match lp {
            Some(v) => *v,
            None if k == 0 => 0.0,
            None => return Err(Error::Scoring(format!("null log-prob for token {k}"))),
        };
        if !(lp <= 0.0) {
            return Err(Error::Scoring(format!("token {k} has log-prob {lp} > 0")));
        }
        out.push(lp);
    }
    if out.is_empty() {
        return Err(Error::Scoring("empty logprob array for step".into()));
    }
    Ok(out)
}

fn parse_response(body: &Value) -> Result<(Vec<String>, Vec<Option<f64>>)> {
    let lp = &body["choices"][0]["logprobs"];
    let tokens = lp["tokens"]
        .as_array()
        .ok_or_else(|| Error::Scoring("response lacks choices[0].logprobs.tokens".into()))?
        .iter()
        .map(|t| t.as_str().map(str::to_owned))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Scoring("non-string token in response".into()))?;
    let values = lp["token_logprobs"]
        .as_array()
        .ok_or_else(|| Error::Scoring("response lacks choices[0].logprobs.token_logprobs".into()))?
        .iter()
        .map(|v| match v {
            Value::Null => Ok(None),
            v => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| Error::Scoring(format!("non-numeric log-prob {v}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((tokens, values))
}

fn sanitize(model: &str) -> String {
    model
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn cache_path(dir: &Path, model: &str, prompt: &str) -> PathBuf {
    let digest = hex::encode(Sha256::digest(prompt.as_bytes()));
    dir.join(sanitize(model)).join(format!("{digest}.json"))
}

/// Blocking HTTP client with retry, backoff and an optional response cache.
pub struct Scorer {
    cfg: ScoringConfig,
    agent: ureq::Agent,
    cache_lock: Mutex<()>,
    attempts: AtomicUsize,
}

impl Scorer {
    pub fn new(cfg: ScoringConfig) -> Result<Self> {
        cfg.validate()?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build();
        Ok(Scorer {
            cfg,
            agent,
            cache_lock: Mutex::new(()),
            attempts: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &ScoringConfig {
        &self.cfg
    }

    /// HTTP attempts made so far, cache hits excluded.
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::Relaxed)
    }

    fn read_cache(&self, prompt: &str) -> Option<Value> {
        let path = cache_path(self.cfg.cache_dir.as_ref()?, &self.cfg.model_name, prompt);
        let text = fs::read_to_string(&path).ok()?;
        match serde_json::from_str(&text) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {}: {e}", path.display());
                None
            }
        }
    }

    fn write_cache(&self, prompt: &str, body: &Value) -> Result<()> {
        let Some(dir) = &self.cfg.cache_dir else { return Ok(()) };
        let path = cache_path(dir, &self.cfg.model_name, prompt);
        let _guard = self.cache_lock.lock().unwrap_or_else(|e| e.into_inner());
        let parent = path.parent().expect("cache path has a parent");
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(body)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    fn post(&self, prompt: &str) -> Result<Value> {
        let body = json!({
            "model": self.cfg.model_name,
            "prompt": prompt,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
        });
        let mut last = String::new();
        for attempt in 0..=self.cfg.retry_limit {
            if attempt > 0 {
                let wait = self.cfg.backoff_secs * f64::powi(2.0, attempt as i32 - 1);
                std::thread::sleep(Duration::from_secs_f64(wait));
            }
            self.attempts.fetch_add(1, Ordering::Relaxed);
            let mut req = self.agent.post(&self.cfg.endpoint_url);
            if let Some(key) = &self.cfg.api_key {
                req = req.set("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(&body) {
                Ok(resp) => match resp.into_json::<Value>() {
                    Ok(v) => return Ok(v),
                    Err(e) => last = format!("unreadable response: {e}"),
                },
                Err(ureq::Error::Status(code, resp)) if code != 429 && (400..500).contains(&code) => {
                    let text = resp.into_string().unwrap_or_default();
                    return Err(Error::Scoring(format!("endpoint returned {code}: {text}")));
                }
                Err(e) => last = e.to_string(),
            }
            log::warn!("scoring attempt {} failed: {last}", attempt + 1);
        }
        Err(Error::Scoring(format!(
            "endpoint failed after {} attempt(s): {last}",
            self.cfg.retry_limit + 1
        )))
    }

    /// Echoed tokens and log-probs for `prompt`, from cache when present.
    pub fn score_prompt(&self, prompt: &str) -> Result<(Vec<String>, Vec<Option<f64>>)> {
        if let Some(v) = self.read_cache(prompt) {
            if let Ok(parsed) = parse_response(&v) {
                return Ok(parsed);
            }
        }
        let v = self.post(prompt)?;
        let parsed = parse_response(&v)?;
        self.write_cache(prompt, &v)?;
        Ok(parsed)
    }

    /// Scores every step of `trace`, one sequential request per step.
    pub fn score_trace(&self, trace: &Trace) -> Result<Trace> {
        if trace.steps.is_empty() {
            return Err(Error::InvalidTrace {
                id: trace.id.clone(),
                message: "no steps to score".into(),
            });
        }
        let mut spans = Vec::with_capacity(trace.steps.len());
        for pos in 0..trace.steps.len() {
            let (prompt, start) = step_prompt(trace, pos, &self.cfg.separator);
            let (tokens, lps) = self.score_prompt(&prompt)?;
            let lp = align_step(&prompt, start, &tokens, &lps).map_err(|e| match e {
                Error::Scoring(m) => Error::Scoring(format!("{} step {}: {m}", trace.id, trace.steps[pos].index)),
                Error::Alignment(m) => Error::Alignment(format!("{} step {}: {m}", trace.id, trace.steps[pos].index)),
                other => other,
            })?;
            spans.push(ScoredSpan::new(trace.steps[pos].index, lp));
        }
        let mut out = merge_offline_scores(trace, &spans)?;
        out.extra.insert(
            "scoring".into(),
            json!({"model": self.cfg.model_name, "separator": self.cfg.separator}),
        );
        Ok(out)
    }

    /// Scores traces with at most `max_parallel_requests` in flight. Output
    /// order matches input order; a failed trace yields its error.
    pub fn score_corpus(&self, traces: &[Trace]) -> Vec<Result<Trace>> {
        let workers = self.cfg.max_parallel_requests.min(traces.len()).max(1);
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<Trace>>>> = traces.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    if k >= traces.len() {
                        break;
                    }
                    let r = self.score_trace(&traces[k]);
                    *slots[k].lock().unwrap() = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("every slot is filled"))
            .collect()
    }
}

pub fn score_trace(trace: &Trace, cfg: &ScoringConfig) -> Result<Trace> {
    Scorer::new(cfg.clone())?.score_trace(trace)
}

/// Attaches one span per step; the trace is otherwise unchanged.
pub fn merge_offline_scores(trace: &Trace, spans: &[ScoredSpan]) -> Result<Trace> {
    let err = |message: String| Error::InvalidTrace {
        id: trace.id.clone(),
        message,
    };
    let mut by_index = std::collections::BTreeMap::new();
    for s in spans {
        s.check().map_err(|e| err(e.to_string()))?;
        if by_index.insert(s.step_index, s).is_some() {
            return Err(err(format!("duplicate span for step {}", s.step_index)));
        }
    }
    let mut out = trace.clone();
    for step in &mut out.steps {
        let span = by_index
            .remove(&step.index)
            .ok_or_else(|| err(format!("missing span for step {}", step.index)))?;
        step.token_logprobs = Some(span.token_logprobs.clone());
    }
    if let Some(extra) = by_index.keys().next() {
        return Err(err(format!("span for step {extra} matches no step")));
    }
    Ok(out)
}

/// Spans of an already scored trace.
pub fn extract_scores(trace: &Trace) -> Result<Vec<ScoredSpan>> {
    trace
        .steps
        .iter()
        .map(|s| match &s.token_logprobs {
            Some(lp) => Ok(ScoredSpan::new(s.index, lp.clone())),
            None => Err(Error::InvalidTrace {
                id: trace.id.clone(),
                message: format!("step {} is unscored", s.index),
            }),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Step;
    use proptest::prelude::*;

    fn trace(steps: &[&str]) -> Trace {
        Trace {
            id: "t".into(),
            question: "Q?".into(),
            answer: None,
            steps: steps
                .iter()
                .enumerate()
                .map(|(k, s)| Step::new(k as i64 + 1, *s))
                .collect(),
            meta: Default::default(),
            extra: Default::default(),
        }
    }

    #[test]
    fn prompts_are_nested_prefixes() {
        let t = trace(&["a b", "c", "d e f"]);
        let (p1, s1) = step_prompt(&t, 0, " | ");
        let (p2, s2) = step_prompt(&t, 1, " | ");
        let (p3, _) = step_prompt(&t, 2, " | ");
        assert_eq!(p1, "Q? | a b");
        assert_eq!(&p1[s1..], "a b");
        assert_eq!(&p2[s2..], "c");
        assert!(p2.starts_with(&p1) && p3.starts_with(&p2) && p2.len() > p1.len());
    }

    #[test]
    fn alignment_rules() {
        let prompt = "Q?\nab cd";
        let start = 3;
        let toks: Vec<String> = ["Q", "?", "\na", "b", " cd"].iter().map(|s| s.to_string()).collect();
        let lps = vec![None, Some(-1.0), Some(-2.0), Some(-3.0), Some(-4.0)];
        // "\na" straddles the boundary and belongs to the step
        assert_eq!(align_step(prompt, start, &toks, &lps).unwrap(), vec![-2.0, -3.0, -4.0]);
        let mut bad = lps.clone();
        bad[3] = None;
        assert!(matches!(align_step(prompt, start, &toks, &bad), Err(Error::Scoring(_))));
        let short: Vec<String> = toks[..4].to_vec();
        assert!(matches!(
            align_step(prompt, start, &short, &lps[..4]),
            Err(Error::Alignment(_))
        ));
        // first-token null counts as certainty when it lands in the step
        let t1 = vec!["xy".to_string()];
        assert_eq!(align_step("xy", 0, &t1, &[None]).unwrap(), vec![0.0]);
    }

    #[test]
    fn merge_contract() {
        let t = trace(&["a"]);
        let m = merge_offline_scores(&t, &[ScoredSpan::new(1, vec![-0.1])]).unwrap();
        let p = m.steps[0].token_probs().unwrap();
        assert!((p[0] - 0.904837).abs() < 1e-6);

        let t3 = trace(&["a", "b", "c"]);
        let e = merge_offline_scores(&t3, &[ScoredSpan::new(1, vec![-0.1]), ScoredSpan::new(2, vec![-0.2])])
            .unwrap_err()
            .to_string();
        assert!(e.contains("missing span for step 3"), "{e}");
        let dup = [ScoredSpan::new(1, vec![-0.1]), ScoredSpan::new(1, vec![-0.1])];
        assert!(merge_offline_scores(&t, &dup)
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
        let extra = [ScoredSpan::new(1, vec![-0.1]), ScoredSpan::new(2, vec![-0.1])];
        assert!(merge_offline_scores(&t, &extra).is_err());
        assert!(merge_offline_scores(&t, &[ScoredSpan::new(1, vec![])]).is_err());
        assert!(merge_offline_scores(&t, &[ScoredSpan::new(1, vec![0.5])]).is_err());
    }

    #[test]
    fn cache_layout() {
        let p = cache_path(Path::new("/c"), "org/model:8b", "hi");
        assert_eq!(
            p,
            Path::new("/c/org_model_8b/8f434346648f6b96df89dda901c5176b10a6d83961dd3c1ac88b59b2dc327aa4.json")
        );
    }

    proptest! {
        #[test]
        fn extract_then_merge_is_identity(spans in prop::collection::vec(prop::collection::vec(-20.0f64..=0.0, 1..6), 1..6)) {
            let texts: Vec<String> = (0..spans.len()).map(|k| format!("s{k}")).collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let t = trace(&refs);
            let scored = merge_offline_scores(
                &t,
                &spans.iter().enumerate().map(|(k, s)| ScoredSpan::new(k as i64 + 1, s.clone())).collect::<Vec<_>>(),
            ).unwrap();
            let again = merge_offline_scores(&t, &extract_scores(&scored).unwrap()).unwrap();
            prop_assert_eq!(again, scored);
        }
    }
}
