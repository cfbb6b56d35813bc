use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::derive_seed;
use crate::trace::Trace;

/// Sampled answers to one open-ended question used as a choice set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiceSet {
    pub question: String,
    pub trace_ids: Vec<String>,
    pub answers: Vec<String>,
    /// All answers were used because fewer than `k` exist.
    pub short: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct McqReport {
    pub sets: Vec<ChoiceSet>,
    /// `(question, reason)` for questions without a usable set.
    pub skipped: Vec<(String, String)>,
}

fn answer_of(t: &Trace) -> String {
    t.answer
        .clone()
        .or_else(|| t.steps.last().map(|s| s.text.clone()))
        .unwrap_or_default()
}

/// Groups traces by question and draws `k` of each group's answers with a
/// seed derived from `seed` and the question's position in sorted order.
pub fn pseudo_mcq(traces: &[Trace], k: usize, seed: u64) -> Result<McqReport> {
    if k < 2 {
        return Err(Error::invalid(format!("choice sets need k >= 2, got {k}")));
    }
    let mut groups: BTreeMap<&str, Vec<&Trace>> = BTreeMap::new();
    for t in traces {
        groups.entry(t.question.as_str()).or_default().push(t);
    }
    let mut report = McqReport::default();
    for (q_index, (question, mut members)) in groups.into_iter().enumerate() {
        if members.len() < 2 {
            report.skipped.push((
                question.to_string(),
                format!("{} answer(s), need at least 2", members.len()),
            ));
            continue;
        }
        members.sort_by(|a, b| a.id.cmp(&b.id));
        let short = members.len() < k;
        let chosen: Vec<&Trace> = if members.len() <= k {
            members
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, q_index as u64));
            let mut idx = sample(&mut rng, members.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| members[i]).collect()
        };
        report.sets.push(ChoiceSet {
            question: question.to_string(),
            trace_ids: chosen.iter().map(|t| t.id.clone()).collect(),
            answers: chosen.iter().map(|t| answer_of(t)).collect(),
            short,
        });
    }
    Ok(report)
}
