//! Per-step uncertainty and cognitive effort, normalization, and phase-space
//! trajectories.
//!
//! Uncertainty `u_t` is the mean over a step's tokens of `-p ln p` (natural
//! log). Effort is the first difference `e_t = u_t - u_{t-1}`; the first step
//! has no predecessor and gets `e_1 = 0` with an origin flag. Step positions
//! are mapped to `tau in [0, 1]` per trajectory, and `u`, `e` are rescaled to
//! `[0, 1]` with corpus-wide extrema.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::Trace;

/// How a step's token probabilities are turned into an uncertainty value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyMode {
    /// Mean of `-p ln p` over the realized tokens.
    #[default]
    Realized,
    /// Mean surprisal `-ln p` over the realized tokens.
    Surprisal,
    /// Mean Shannon entropy of each token's alternative distribution, with the
    /// unlisted mass lumped into one extra outcome.
    Topk,
}

impl EntropyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EntropyMode::Realized => "realized",
            EntropyMode::Surprisal => "surprisal",
            EntropyMode::Topk => "topk",
        }
    }
}

impl fmt::Display for EntropyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntropyMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "realized" => Ok(EntropyMode::Realized),
            "surprisal" => Ok(EntropyMode::Surprisal),
            "topk" => Ok(EntropyMode::Topk),
            _ => Err(Error::invalid(format!("unknown entropy mode {s:?}"))),
        }
    }
}

/// Token scores of one step, as needed by [`step_uncertainty`].
#[derive(Clone, Copy, Debug)]
pub struct TokenScores<'a> {
    pub probs: &'a [f64],
    /// Per-token alternative probabilities (topk mode only).
    pub alternatives: Option<&'a [Vec<f64>]>,
}

impl<'a> TokenScores<'a> {
    pub fn realized(probs: &'a [f64]) -> Self {
        TokenScores {
            probs,
            alternatives: None,
        }
    }
}

fn check_prob(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("probability out of range: {p}")))
    }
}

/// `-p ln p`, with the `p = 1` endpoint exactly zero.
#[inline]
pub fn neg_p_ln_p(p: f64) -> f64 {
    if p >= 1.0 {
        0.0
    } else {
        -p * p.ln()
    }
}

/// Uncertainty of a single step.
pub fn step_uncertainty(scores: TokenScores<'_>, mode: EntropyMode) -> Result<f64> {
    let probs = scores.probs;
    if probs.is_empty() {
        return Err(Error::invalid("empty token probability list"));
    }
    for &p in probs {
        check_prob(p)?;
    }
    let n = probs.len() as f64;
    let u = match mode {
        EntropyMode::Realized => probs.iter().map(|&p| neg_p_ln_p(p)).sum::<f64>() / n,
        EntropyMode::Surprisal => probs.iter().map(|&p| -p.ln()).sum::<f64>() / n,
        EntropyMode::Topk => {
            let alts = scores
                .alternatives
                .ok_or_else(|| Error::invalid("topk mode needs per-token alternatives"))?;
            if alts.len() != probs.len() {
                return Err(Error::invalid(format!(
                    "{} alternative rows for {} tokens",
                    alts.len(),
                    probs.len()
                )));
            }
            let mut total = 0.0;
            for row in alts {
                let mut mass = 0.0;
                let mut h = 0.0;
                for &q in row {
                    check_prob(q)?;
                    mass += q;
                    h += neg_p_ln_p(q);
                }
                let residual = 1.0 - mass;
                if residual > 0.0 {
                    h += neg_p_ln_p(residual);
                }
                total += h;
            }
            total / n
        }
    };
    Ok(u.max(0.0))
}

/// Effort between consecutive steps: `u_t - u_prev`.
#[inline]
pub fn cognitive_effort(u_t: f64, u_prev: f64) -> f64 {
    u_t - u_prev
}

/// Local step normalization: `tau_t = (t-1)/(T-1)`, or `[0]` for `T = 1`.
pub fn local_tau(steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![0.0],
        n => {
            let denom = (n - 1) as f64;
            (0..n).map(|i| i as f64 / denom).collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub step_index: i64,
    pub tau: f64,
    pub u_raw: f64,
    pub e_raw: f64,
    pub u: f64,
    pub e: f64,
    /// First point of a trace-derived trajectory; its effort is a convention.
    pub origin: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub trace_id: String,
    pub points: Vec<PhasePoint>,
    pub entropy_mode: EntropyMode,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Builds raw points from an uncertainty sequence; normalized fields are
    /// left equal to the raw ones until [`apply_normalization`].
    pub fn from_uncertainties(trace_id: impl Into<String>, u_raw: &[f64], mode: EntropyMode) -> Self {
        let taus = local_tau(u_raw.len());
        let points = u_raw
            .iter()
            .enumerate()
            .map(|(i, &u)| {
                let e = if i == 0 { 0.0 } else { cognitive_effort(u, u_raw[i - 1]) };
                PhasePoint {
                    step_index: i as i64 + 1,
                    tau: taus[i],
                    u_raw: u,
                    e_raw: e,
                    u,
                    e,
                    origin: i == 0,
                }
            })
            .collect();
        Trajectory {
            trace_id: trace_id.into(),
            points,
            entropy_mode: mode,
        }
    }
}

/// Computes the raw trajectory of a scored trace.
pub fn build_trajectory(trace: &Trace, mode: EntropyMode) -> Result<Trajectory> {
    let mut us = Vec::with_capacity(trace.steps.len());
    for step in &trace.steps {
        let probs = step.token_probs().ok_or_else(|| Error::InvalidTrace {
            id: trace.id.clone(),
            message: format!("step {} is unscored", step.index),
        })?;
        let alts = step.topk_probs();
        let scores = TokenScores {
            probs: &probs,
            alternatives: alts.as_deref(),
        };
        let u = step_uncertainty(scores, mode).map_err(|e| Error::InvalidTrace {
            id: trace.id.clone(),
            message: format!("step {}: {e}", step.index),
        })?;
        us.push(u);
    }
    let mut traj = Trajectory::from_uncertainties(trace.id.clone(), &us, mode);
    for (p, s) in traj.points.iter_mut().zip(&trace.steps) {
        p.step_index = s.index;
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub u_min: f64,
    pub u_max: f64,
    pub e_min: f64,
    pub e_max: f64,
}

impl NormalizationStats {
    /// Stats describing an already-normalized unit square.
    pub const UNIT: NormalizationStats = NormalizationStats {
        u_min: 0.0,
        u_max: 1.0,
        e_min: 0.0,
        e_max: 1.0,
    };

    /// Elementwise min/max merge; commutative and associative.
    pub fn merge(&self, other: &NormalizationStats) -> NormalizationStats {
        NormalizationStats {
            u_min: self.u_min.min(other.u_min),
            u_max: self.u_max.max(other.u_max),
            e_min: self.e_min.min(other.e_min),
            e_max: self.e_max.max(other.e_max),
        }
    }

    pub fn scale_u(&self, x: f64) -> f64 {
        scale(x, self.u_min, self.u_max)
    }

    pub fn scale_e(&self, x: f64) -> f64 {
        scale(x, self.e_min, self.e_max)
    }
}

fn scale(x: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (x - lo) / (hi - lo)
    } else {
        0.5
    }
}

/// Corpus-wide extrema of raw `u` and `e`.
pub fn fit_normalization(trajectories: &[Trajectory]) -> Result<NormalizationStats> {
    trajectories
        .iter()
        .flat_map(|t| &t.points)
        .map(|p| NormalizationStats {
            u_min: p.u_raw,
            u_max: p.u_raw,
            e_min: p.e_raw,
            e_max: p.e_raw,
        })
        .reduce(|a, b| a.merge(&b))
        .ok_or_else(|| Error::Empty("no phase points to normalize".into()))
}

/// Fills normalized `u`, `e`. Values outside `[0, 1]` (stats from another
/// corpus) are clipped; the return value counts clipped coordinates.
pub fn apply_normalization(traj: &mut Trajectory, stats: &NormalizationStats) -> usize {
    let mut clipped = 0;
    let mut clip = |x: f64| {
        if (0.0..=1.0).contains(&x) {
            x
        } else {
            clipped += 1;
            x.clamp(0.0, 1.0)
        }
    };
    for p in &mut traj.points {
        p.u = clip(stats.scale_u(p.u_raw));
        p.e = clip(stats.scale_e(p.e_raw));
    }
    clipped
}

/// Builds, fits and normalizes trajectories for a whole corpus.
pub fn track_corpus(traces: &[Trace], mode: EntropyMode) -> Result<(Vec<Trajectory>, NormalizationStats)> {
    let built: Vec<Result<Trajectory>> = crate::par::map(traces, |t| build_trajectory(t, mode));
    let mut trajs = built.into_iter().collect::<Result<Vec<_>>>()?;
    let stats = fit_normalization(&trajs)?;
    for t in &mut trajs {
        apply_normalization(t, &stats);
    }
    Ok((trajs, stats))
}
