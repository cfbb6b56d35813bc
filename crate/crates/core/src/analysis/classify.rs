use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{accumulate_field, FieldOptions, FlowField, Grid, VelocitySample};
use crate::infodyn::{PhasePoint, Trajectory};
use crate::trace::Trace;

pub const DEFAULT_THETA: f64 = 0.3;
pub const DEFAULT_FALLBACK_WINDOW: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Motion opposite to the reference flow.
    IntuitionCollapse,
    /// Motion roughly perpendicular to the reference flow.
    MetacognitionConflict,
    /// Motion along the reference flow.
    RationaleError,
}

impl Stage {
    pub const ALL: [Stage; 3] = [
        Stage::IntuitionCollapse,
        Stage::MetacognitionConflict,
        Stage::RationaleError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::IntuitionCollapse => "intuition_collapse",
            Stage::MetacognitionConflict => "metacognition_conflict",
            Stage::RationaleError => "rationale_error",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage {s:?}")))
    }
}

/// Closed rectangle in the normalized phase plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub u_min: f64,
    pub u_max: f64,
    pub e_min: f64,
    pub e_max: f64,
}

impl Region {
    pub fn contains(&self, u: f64, e: f64) -> bool {
        (self.u_min..=self.u_max).contains(&u) && (self.e_min..=self.e_max).contains(&e)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageGates {
    pub intuition_collapse: Option<Region>,
    pub metacognition_conflict: Option<Region>,
    pub rationale_error: Option<Region>,
}

impl StageGates {
    pub fn get(&self, stage: Stage) -> Option<&Region> {
        match stage {
            Stage::IntuitionCollapse => self.intuition_collapse.as_ref(),
            Stage::MetacognitionConflict => self.metacognition_conflict.as_ref(),
            Stage::RationaleError => self.rationale_error.as_ref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    /// Half-width of the cosine dead band around 0.
    pub theta: f64,
    pub gates: StageGates,
    /// Use the τ-windowed mean reference velocity when the containing cell is
    /// empty.
    pub fallback: bool,
    pub fallback_window: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            theta: DEFAULT_THETA,
            gates: StageGates::default(),
            fallback: true,
            fallback_window: DEFAULT_FALLBACK_WINDOW,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.theta) {
            return Err(Error::invalid(format!("theta must lie in [0, 1), got {}", self.theta)));
        }
        if !(self.fallback_window >= 0.0) {
            return Err(Error::invalid("fallback_window must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageLabel {
    pub stage: Stage,
    pub cosine: f64,
    pub cell: Option<(usize, usize)>,
    /// The configured gate for `stage` does not contain the location.
    pub gate_conflict: bool,
    pub used_fallback: bool,
}

/// Decision rule: `c < -theta` collapse, `|c| <= theta` conflict,
/// `c > theta` aligned.
pub fn stage_for_cosine(c: f64, theta: f64) -> Stage {
    if c < -theta {
        Stage::IntuitionCollapse
    } else if c > theta {
        Stage::RationaleError
    } else {
        Stage::MetacognitionConflict
    }
}

pub fn cosine(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    let na = a.0.hypot(a.1);
    let nb = b.0.hypot(b.1);
    if !(na > 0.0 && na.is_finite()) || !(nb > 0.0 && nb.is_finite()) {
        return Err(Error::Numerical(format!(
            "zero-norm velocity in cosine of {a:?} and {b:?}"
        )));
    }
    Ok(((a.0 * b.0 + a.1 * b.1) / (na * nb)).clamp(-1.0, 1.0))
}

/// Flow of correct segments, plus the samples themselves for the τ fallback.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceFlow {
    pub field: FlowField,
    pub samples: Vec<VelocitySample>,
}

/// Segments of `traj` (as emitted by `segment_velocities`) paired with the
/// position of their starting point.
fn positioned_segments(points: &[PhasePoint]) -> Vec<(usize, VelocitySample)> {
    let Ok(samples) = crate::flow::segment_velocities(points) else {
        return Vec::new();
    };
    let starts = (0..points.len().saturating_sub(1)).filter(|&k| !points[k].origin);
    starts.zip(samples).collect()
}

/// Reference field from segments whose two endpoint steps are both marked
/// correct. Each item pairs a trajectory with its per-step correctness.
pub fn reference_flow(
    items: &[(&Trajectory, Option<&[bool]>)],
    grid: Grid,
    opts: FieldOptions,
) -> Result<ReferenceFlow> {
    if items.iter().all(|(_, c)| c.is_none()) {
        return Err(Error::invalid("no trajectory carries correctness annotations"));
    }
    let mut samples = Vec::new();
    for (traj, correct) in items {
        let Some(correct) = correct else { continue };
        if correct.len() != traj.points.len() {
            return Err(Error::InvalidTrace {
                id: traj.trace_id.clone(),
                message: format!("{} correctness flags for {} steps", correct.len(), traj.points.len()),
            });
        }
        samples.extend(
            positioned_segments(&traj.points)
                .into_iter()
                .filter(|(k, _)| correct[*k] && correct[k + 1])
                .map(|(_, s)| s),
        );
    }
    if samples.is_empty() {
        return Err(Error::Empty("no segment has both endpoints marked correct".into()));
    }
    let field = accumulate_field(&samples, grid, opts)?;
    Ok(ReferenceFlow { field, samples })
}

fn reference_velocity(
    loc: (f64, f64),
    tau: f64,
    reference: &ReferenceFlow,
    cfg: &ClassifierConfig,
) -> Result<(Option<(usize, usize)>, (f64, f64), bool)> {
    let cell = reference.field.grid.cell_of(loc.0, loc.1);
    if let Some((i, j)) = cell {
        let c = reference.field.cell(i, j);
        if c.count > 0 && (c.v1_mean != 0.0 || c.v2_mean != 0.0) {
            return Ok((cell, (c.v1_mean, c.v2_mean), false));
        }
    }
    if !cfg.fallback {
        return Err(Error::Empty(format!(
            "reference cell at ({:.4}, {:.4}) is empty and fallback is disabled",
            loc.0, loc.1
        )));
    }
    let near: Vec<&VelocitySample> = reference
        .samples
        .iter()
        .filter(|s| (s.tau - tau).abs() <= cfg.fallback_window)
        .collect();
    if near.is_empty() {
        return Err(Error::Empty(format!(
            "no reference segment within τ ± {} of {tau:.4}",
            cfg.fallback_window
        )));
    }
    let n = near.len() as f64;
    let v = near.iter().fold((0.0, 0.0), |acc, s| (acc.0 + s.v1, acc.1 + s.v2));
    Ok((cell, (v.0 / n, v.1 / n), true))
}

/// Labels one error segment by the cosine between its velocity and the
/// reference flow at its location (`tau` is used only by the fallback).
pub fn classify_error_step(
    v_err: (f64, f64),
    loc: (f64, f64),
    tau: f64,
    reference: &ReferenceFlow,
    cfg: &ClassifierConfig,
) -> Result<StageLabel> {
    cfg.validate()?;
    if v_err.0.hypot(v_err.1) == 0.0 {
        return Err(Error::Numerical("error velocity has zero norm".into()));
    }
    let (cell, v_ref, used_fallback) = reference_velocity(loc, tau, reference, cfg)?;
    let c = cosine(v_err, v_ref)?;
    let stage = stage_for_cosine(c, cfg.theta);
    let gate_conflict = cfg.gates.get(stage).is_some_and(|g| !g.contains(loc.0, loc.1));
    Ok(StageLabel {
        stage,
        cosine: c,
        cell,
        gate_conflict,
        used_fallback,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedStep {
    pub trace_id: String,
    pub step_index: i64,
    pub label: StageLabel,
    /// Stage recorded in the step's error label, when it names one.
    pub annotated: Option<Stage>,
}

/// Outcome of classifying a corpus.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusClassification {
    pub steps: Vec<ClassifiedStep>,
    /// `(trace_id, step_index, reason)` for incorrect steps that could not be
    /// labelled.
    pub skipped: Vec<(String, i64, String)>,
}

/// Classifies every step marked incorrect by its incoming segment. Items
/// carry `(trajectory, correctness, error labels)`.
pub fn classify_corpus(
    items: &[(&Trajectory, Option<&[bool]>, Vec<Option<String>>)],
    reference: &ReferenceFlow,
    cfg: &ClassifierConfig,
) -> Result<CorpusClassification> {
    cfg.validate()?;
    let mut out = CorpusClassification::default();
    for (traj, correct, labels) in items {
        let Some(correct) = correct else { continue };
        let pts = &traj.points;
        for (k, ok) in correct.iter().enumerate() {
            if *ok || k >= pts.len() {
                continue;
            }
            let step = pts[k].step_index;
            let mut skip = |why: String| out.skipped.push((traj.trace_id.clone(), step, why));
            if k == 0 || pts[k - 1].origin {
                skip("incoming segment starts at the origin point".into());
                continue;
            }
            let (a, b) = (&pts[k - 1], &pts[k]);
            let dt = b.tau - a.tau;
            if dt == 0.0 {
                skip("zero τ increment".into());
                continue;
            }
            let v = ((b.u - a.u) / dt, (b.e - a.e) / dt);
            let loc = (0.5 * (a.u + b.u), 0.5 * (a.e + b.e));
            match classify_error_step(v, loc, 0.5 * (a.tau + b.tau), reference, cfg) {
                Ok(label) => out.steps.push(ClassifiedStep {
                    trace_id: traj.trace_id.clone(),
                    step_index: step,
                    label,
                    annotated: labels.get(k).and_then(|l| l.as_deref()).and_then(|l| l.parse().ok()),
                }),
                Err(e) => skip(e.to_string()),
            }
        }
    }
    Ok(out)
}

/// Builds the reference flow from `traces`' correctness annotations and
/// classifies their incorrect steps. `trajectories[k]` belongs to
/// `traces[k]`.
pub fn classify_traces(
    traces: &[Trace],
    trajectories: &[Trajectory],
    grid: Grid,
    opts: FieldOptions,
    cfg: &ClassifierConfig,
) -> Result<(ReferenceFlow, CorpusClassification)> {
    if traces.len() != trajectories.len() {
        return Err(Error::invalid("traces and trajectories differ in length"));
    }
    let pairs: Vec<(&Trajectory, Option<&[bool]>)> = trajectories
        .iter()
        .zip(traces)
        .map(|(t, tr)| (t, tr.meta.correctness.as_deref()))
        .collect();
    let reference = reference_flow(&pairs, grid, opts)?;
    let items: Vec<_> = pairs
        .iter()
        .zip(traces)
        .map(|(&(t, c), tr)| (t, c, tr.steps.iter().map(|s| s.error_label.clone()).collect()))
        .collect();
    let out = classify_corpus(&items, &reference, cfg)?;
    Ok((reference, out))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageDistribution {
    pub total: usize,
    pub counts: BTreeMap<String, usize>,
    pub ratios: BTreeMap<String, f64>,
    /// Per annotated stage: fraction of annotated steps the classifier agrees
    /// with. Absent when no step carries that annotation.
    pub agreement: BTreeMap<String, f64>,
    pub annotated: usize,
}

pub fn stage_distribution(steps: &[ClassifiedStep]) -> StageDistribution {
    let mut d = StageDistribution {
        total: steps.len(),
        ..Default::default()
    };
    for st in Stage::ALL {
        let n = steps.iter().filter(|s| s.label.stage == st).count();
        d.counts.insert(st.to_string(), n);
        let ratio = if steps.is_empty() {
            0.0
        } else {
            n as f64 / steps.len() as f64
        };
        d.ratios.insert(st.to_string(), ratio);
        let ann: Vec<_> = steps.iter().filter(|s| s.annotated == Some(st)).collect();
        if !ann.is_empty() {
            let agree = ann.iter().filter(|s| s.label.stage == st).count();
            d.agreement.insert(st.to_string(), agree as f64 / ann.len() as f64);
        }
        d.annotated += ann.len();
    }
    d
}
