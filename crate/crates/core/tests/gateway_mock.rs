use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use iftrack_core::gateway::{score_trace, Scorer, ScoringConfig};
use iftrack_core::infodyn::{build_trajectory, EntropyMode};
use iftrack_core::trace::{Step, Trace};
use iftrack_core::Error;
use serde_json::{json, Value};

/// Splits the prompt into 3-character tokens and answers every token with
/// `logprob`; the first token gets null.
struct Mock {
    url: String,
    prompts: Arc<Mutex<Vec<String>>>,
}

fn handle(mut stream: TcpStream, logprob: f64, prompts: &Mutex<Vec<String>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap() == 0 {
            return;
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some(v) = l.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    let req: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(req["max_tokens"], 0);
    assert_eq!(req["echo"], true);
    let prompt = req["prompt"].as_str().unwrap().to_string();
    let chars: Vec<char> = prompt.chars().collect();
    let tokens: Vec<String> = chars.chunks(3).map(|c| c.iter().collect()).collect();
    let lps: Vec<Value> = (0..tokens.len())
        .map(|k| if k == 0 { Value::Null } else { json!(logprob) })
        .collect();
    prompts.lock().unwrap().push(prompt);
    let out = json!({"choices": [{"logprobs": {"tokens": tokens, "token_logprobs": lps}}]}).to_string();
    let _ = write!(
        stream,
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        out.len(),
        out
    );
}

fn mock(logprob: f64) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/completions", listener.local_addr().unwrap());
    let prompts = Arc::new(Mutex::new(Vec::new()));
    let p = prompts.clone();
    thread::spawn(move || {
        for s in listener.incoming() {
            let p = p.clone();
            thread::spawn(move || handle(s.unwrap(), logprob, &p));
        }
    });
    Mock { url, prompts }
}

fn trace(id: &str, steps: &[&str]) -> Trace {
    Trace {
        id: id.into(),
        question: "What is 2+2?".into(),
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

fn cfg(url: &str) -> ScoringConfig {
    ScoringConfig {
        endpoint_url: url.into(),
        model_name: "mock".into(),
        max_parallel_requests: 2,
        backoff_secs: 0.01,
        timeout_secs: 5.0,
        ..Default::default()
    }
}

#[test]
fn half_probability_tokens() {
    let m = mock(-std::f64::consts::LN_2);
    let t = score_trace(&trace("a", &["two plus two is four"]), &cfg(&m.url)).unwrap();
    let p = t.steps[0].token_probs().unwrap();
    assert!(!p.is_empty());
    assert!(p.iter().all(|p| (p - 0.5).abs() < 1e-6));
    assert_eq!(t.extra["scoring"]["separator"], "\n");
}

#[test]
fn certain_tokens_give_zero_uncertainty() {
    let m = mock(0.0);
    let t = score_trace(&trace("a", &["first", "second step"]), &cfg(&m.url)).unwrap();
    for s in &t.steps {
        assert!(s.token_probs().unwrap().iter().all(|&p| p == 1.0));
    }
    let tr = build_trajectory(&t, EntropyMode::Realized).unwrap();
    assert!(tr.points.iter().all(|p| p.u_raw == 0.0));
}

#[test]
fn prefixes_grow_and_runs_repeat() {
    let m = mock(-0.25);
    let t = trace("a", &["alpha", "beta", "gamma delta"]);
    let a = score_trace(&t, &cfg(&m.url)).unwrap();
    let b = score_trace(&t, &cfg(&m.url)).unwrap();
    assert_eq!(a, b);
    let log = m.prompts.lock().unwrap().clone();
    assert_eq!(log.len(), 6);
    for w in log[..3].windows(2) {
        assert!(w[1].starts_with(&w[0]) && w[1].len() > w[0].len());
    }
    // each step gets exactly the tokens ending inside its own text
    let (p3, s3) = iftrack_core::gateway::step_prompt(&t, 2, "\n");
    let expected = p3
        .chars()
        .collect::<Vec<_>>()
        .chunks(3)
        .scan(0, |end, c| {
            *end += c.iter().map(|ch| ch.len_utf8()).sum::<usize>();
            Some(*end)
        })
        .filter(|&end| end > s3)
        .count();
    assert_eq!(a.steps[2].token_logprobs.as_ref().unwrap().len(), expected);
}

#[test]
fn cache_makes_reruns_free() {
    let m = mock(-0.5);
    let dir = tempfile::tempdir().unwrap();
    let mut c = cfg(&m.url);
    c.cache_dir = Some(dir.path().to_path_buf());
    let t = trace("a", &["x", "y"]);
    let first = Scorer::new(c.clone()).unwrap();
    let a = first.score_trace(&t).unwrap();
    assert_eq!(first.attempts(), 2);
    let second = Scorer::new(c).unwrap();
    let b = second.score_trace(&t).unwrap();
    assert_eq!(second.attempts(), 0);
    assert_eq!(a, b);
    assert_eq!(std::fs::read_dir(dir.path().join("mock")).unwrap().count(), 2);
}

#[test]
fn corpus_scoring_keeps_order() {
    let m = mock(-1.0);
    let traces: Vec<Trace> = (0..7).map(|k| trace(&format!("t{k}"), &["s one", "s two"])).collect();
    let scorer = Scorer::new(cfg(&m.url)).unwrap();
    let out = scorer.score_corpus(&traces);
    assert_eq!(out.len(), 7);
    for (k, r) in out.iter().enumerate() {
        assert_eq!(r.as_ref().unwrap().id, format!("t{k}"));
    }
}

#[test]
fn dead_endpoint_fails_after_retries() {
    // bind then drop to get a port nobody listens on
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let c = ScoringConfig {
        retry_limit: 2,
        ..cfg(&format!("http://127.0.0.1:{port}/v1/completions"))
    };
    let scorer = Scorer::new(c).unwrap();
    let t = trace("a", &["x"]);
    let e = scorer.score_trace(&t).unwrap_err();
    assert!(matches!(e, Error::Scoring(_)), "{e}");
    assert_eq!(scorer.attempts(), 3);
    assert!(t.steps[0].token_logprobs.is_none());
}
