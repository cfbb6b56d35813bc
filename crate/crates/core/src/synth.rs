//! Synthetic scored corpora whose uncertainty sequences follow simulated
//! separable-Hamiltonian dynamics, with planted error steps.
//!
//! Every step holds a single token whose probability `p` solves
//! `-p ln p = u` on the branch `p ∈ (0, 1/e]`, so realized-mode scoring
//! reproduces the simulated `u` exactly.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analysis::classify::Stage;
use crate::baselines::EmbeddingRecord;
use crate::error::{Error, Result};
use crate::flow::{accumulate_field, corpus_velocities, leapfrog, CellEstimator, FieldOptions, FlowField, Grid};
use crate::infodyn::{apply_normalization, fit_normalization, EntropyMode, NormalizationStats, Trajectory};
use crate::par::derive_seed;
use crate::trace::{Annotations, CohortValue, ReasoningType, Step, Trace};

/// Largest value of `-p ln p`.
pub fn max_uncertainty() -> f64 {
    (-1.0f64).exp()
}

/// Root of `-p ln p = u` with `p ∈ (0, 1/e]`; `u = 0` maps to `p = 1`.
pub fn probability_for_uncertainty(u: f64) -> Result<f64> {
    let top = max_uncertainty();
    if !(u >= 0.0) || u > top * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "uncertainty {u} is outside [0, 1/e] and cannot be realized by one token"
        )));
    }
    if u == 0.0 {
        return Ok(1.0);
    }
    let h = |p: f64| -p * p.ln();
    let (mut lo, mut hi) = (0.0f64, top);
    if u >= h(hi) {
        return Ok(hi);
    }
    // h is increasing on (0, 1/e]
    for _ in 0..1100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // pick the closer endpoint
    Ok(if (h(lo) - u).abs() <= (h(hi) - u).abs() && lo > 0.0 {
        lo
    } else {
        hi
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    /// `U(u) = k (u - center)^2 / 2`
    Harmonic {
        k: f64,
        center: f64,
    },
    Flat,
}

impl PotentialSpec {
    pub fn value(&self, u: f64) -> f64 {
        match *self {
            PotentialSpec::Harmonic { k, center } => 0.5 * k * (u - center) * (u - center),
            PotentialSpec::Flat => 0.0,
        }
    }

    pub fn slope(&self, u: f64) -> f64 {
        match *self {
            PotentialSpec::Harmonic { k, center } => k * (u - center),
            PotentialSpec::Flat => 0.0,
        }
    }
}

/// What to do when a simulated uncertainty leaves `[0, 1/e]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangePolicy {
    #[default]
    Fail,
    /// Scale the whole corpus down so the maximum is `1/e`; clip negatives
    /// to 0.
    Rescale,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantSpec {
    /// Fraction of traces that receive one planted error.
    pub fraction: f64,
    /// Relative weights of collapse, conflict and aligned errors.
    pub mix: [f64; 3],
    /// Planted speed relative to the clean segment speed.
    pub magnitude: f64,
}

impl Default for PlantSpec {
    fn default() -> Self {
        PlantSpec {
            fraction: 0.3,
            mix: [1.0, 1.0, 1.0],
            magnitude: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_traces: usize,
    /// Inclusive range of steps per trace.
    pub steps: (usize, usize),
    pub potential: PotentialSpec,
    /// Simulated time between consecutive steps.
    pub dt: f64,
    /// Integrator substeps per step.
    pub substeps: usize,
    /// Range of oscillation amplitudes in `u`.
    pub amplitude: (f64, f64),
    pub noise_level: f64,
    pub plant: PlantSpec,
    pub n_questions: usize,
    pub embedding_dim: usize,
    pub range_policy: RangePolicy,
    pub grid: (usize, usize),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_traces: 200,
            steps: (8, 16),
            potential: PotentialSpec::Harmonic { k: 1.0, center: 0.18 },
            dt: 0.35,
            substeps: 8,
            amplitude: (0.05, 0.15),
            noise_level: 0.0,
            plant: PlantSpec::default(),
            n_questions: 20,
            embedding_dim: 16,
            range_policy: RangePolicy::Fail,
            grid: (crate::flow::DEFAULT_GRID, crate::flow::DEFAULT_GRID),
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.n_traces == 0 {
            return bad("n_traces must be positive".into());
        }
        if self.steps.0 < 1 || self.steps.0 > self.steps.1 {
            return bad(format!("invalid steps range {:?}", self.steps));
        }
        if !(self.dt > 0.0) || self.substeps == 0 {
            return bad("dt and substeps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.plant.fraction) {
            return bad(format!("plant fraction {} outside [0, 1]", self.plant.fraction));
        }
        if self.plant.mix.iter().any(|w| !(*w >= 0.0)) || self.plant.mix.iter().sum::<f64>() <= 0.0 {
            return bad("plant mix weights must be non-negative and not all zero".into());
        }
        if !(self.plant.magnitude > 0.0) {
            return bad("plant magnitude must be positive".into());
        }
        if !(self.noise_level >= 0.0) {
            return bad("noise_level must be non-negative".into());
        }
        if self.amplitude.0 < 0.0 || self.amplitude.0 > self.amplitude.1 {
            return bad(format!("invalid amplitude range {:?}", self.amplitude));
        }
        if self.n_questions == 0 {
            return bad("n_questions must be positive".into());
        }
        Grid::new(self.grid.0, self.grid.1)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub dt: f64,
    pub substeps: usize,
    pub x0: (f64, f64),
    pub steps: usize,
    pub seed: u64,
    pub noise_level: f64,
}

/// Sidecar ground truth for one generated trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub trace_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planted_stage: Option<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planted_step: Option<i64>,
    /// Cosine of the planted segment against the clean flow at its location.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planted_cosine: Option<f64>,
    pub true_potential: PotentialSpec,
    pub sim_params: SimRecord,
    /// Uncertainty sequence the trace encodes.
    pub u: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub traces: Vec<Trace>,
    pub truth: Vec<GroundTruth>,
    pub embeddings: Vec<EmbeddingRecord>,
    /// `(trace_id, reason)` for traces selected for planting that could not
    /// take an error.
    pub unplanted: Vec<(String, String)>,
}

/// Clean flow and normalization used to aim planted errors.
#[derive(Clone, Debug)]
pub struct PlantContext {
    pub stats: NormalizationStats,
    pub field: FlowField,
}

impl PlantContext {
    pub fn new(clean: &[Trajectory], grid: Grid) -> Result<Self> {
        let stats = fit_normalization(clean)?;
        let normed: Vec<Trajectory> = clean
            .iter()
            .map(|t| {
                let mut t = t.clone();
                apply_normalization(&mut t, &stats);
                t
            })
            .collect();
        let opts = FieldOptions {
            estimator: CellEstimator::Mean,
            min_count: 1,
        };
        let field = accumulate_field(&corpus_velocities(&normed), grid, opts)?;
        Ok(PlantContext { stats, field })
    }

    fn direction(&self, loc: (f64, f64)) -> Option<(f64, f64)> {
        let (i, j) = self.field.grid.cell_of(loc.0, loc.1)?;
        let c = self.field.cell(i, j);
        let n = c.v1_mean.hypot(c.v2_mean);
        (c.count > 0 && n > 0.0).then(|| (c.v1_mean / n, c.v2_mean / n))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedError {
    pub stage: Stage,
    /// Position of the planted step in the trace (0-based).
    pub position: usize,
    pub cosine: f64,
}

fn rotate(d: (f64, f64), a: f64) -> (f64, f64) {
    let (s, c) = a.sin_cos();
    (c * d.0 - s * d.1, s * d.0 + c * d.1)
}

fn stage_angle(stage: Stage, rng: &mut impl Rng) -> f64 {
    let deg = PI / 180.0;
    match stage {
        Stage::IntuitionCollapse => PI + rng.gen_range(-25.0..25.0) * deg,
        Stage::MetacognitionConflict => {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * (90.0 + rng.gen_range(-3.0..3.0)) * deg
        }
        Stage::RationaleError => rng.gen_range(-25.0..25.0) * deg,
    }
}

fn in_sector(stage: Stage, c: f64) -> bool {
    match stage {
        Stage::IntuitionCollapse => c < -0.5,
        Stage::MetacognitionConflict => c.abs() < 0.1,
        Stage::RationaleError => c > 0.5,
    }
}

/// Replaces `u[pos-1]` and `u[pos]` so that the normalized velocity of the
/// segment ending at `pos` lies in `stage`'s cosine sector relative to the
/// clean flow at the segment's new midpoint. Magnitude is relative to the
/// clean segment speed and shrinks until every affected raw value stays
/// inside the context's normalization range. Returns the new sequence.
pub fn plant_error(
    u: &[f64],
    pos: usize,
    stage: Stage,
    magnitude: f64,
    seed: u64,
    ctx: &PlantContext,
) -> Result<(Vec<f64>, PlantedError)> {
    let n = u.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "trajectory has {n} points, planting needs at least 3"
        )));
    }
    if pos < 2 || pos >= n {
        return Err(Error::invalid(format!("planting position {pos} outside 2..{n}")));
    }
    let s = &ctx.stats;
    let (ru, re) = (s.u_max - s.u_min, s.e_max - s.e_min);
    if !(ru > 0.0 && re > 0.0) {
        return Err(Error::invalid("normalization range is degenerate"));
    }
    let e_raw = |v: &[f64], k: usize| if k == 0 { 0.0 } else { v[k] - v[k - 1] };
    // keep corpus extrema where they are
    let touches_extremum = [pos - 1, pos].iter().any(|&k| u[k] == s.u_min || u[k] == s.u_max)
        || (pos - 1..=(pos + 1).min(n - 1)).any(|k| {
            let e = e_raw(u, k);
            e == s.e_min || e == s.e_max
        });
    if touches_extremum {
        return Err(Error::invalid("planting position holds a corpus extremum"));
    }

    let dtau = 1.0 / (n - 1) as f64;
    let norm = |v: &[f64], k: usize| (s.scale_u(v[k]), s.scale_e(e_raw(v, k)));
    let mid = |v: &[f64]| {
        let (a, b) = (norm(v, pos - 1), norm(v, pos));
        (0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1))
    };
    let (p0, p1) = (norm(u, pos - 1), norm(u, pos));
    let clean_v = ((p1.0 - p0.0) / dtau, (p1.1 - p0.1) / dtau);
    let clean_speed = clean_v.0.hypot(clean_v.1);
    let clean_dir = if clean_speed > 0.0 {
        (clean_v.0 / clean_speed, clean_v.1 / clean_speed)
    } else {
        (1.0, 0.0)
    };
    let base_speed = if clean_speed > 0.0 {
        clean_speed
    } else {
        ctx.field.mean_speed().max(1e-3)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = stage_angle(stage, &mut rng);
    let inside = |v: &[f64]| {
        [pos - 1, pos].iter().all(|&k| (s.u_min..=s.u_max).contains(&v[k]))
            && (pos - 1..=(pos + 1).min(n - 1)).all(|k| (s.e_min..=s.e_max).contains(&e_raw(v, k)))
    };

    let mut speed = magnitude * base_speed;
    for _ in 0..60 {
        let mut v = u.to_vec();
        let mut loc = mid(u);
        for _ in 0..8 {
            let reference = ctx.direction(loc).unwrap_or(clean_dir);
            let d = rotate(reference, alpha);
            let a = speed * d.0 * dtau * ru;
            let b = a - speed * d.1 * dtau * re;
            v[pos - 1] = u[pos - 2] + b;
            v[pos] = v[pos - 1] + a;
            loc = mid(&v);
        }
        if inside(&v) {
            let final_ref = ctx.direction(loc).unwrap_or(clean_dir);
            let (q0, q1) = (norm(&v, pos - 1), norm(&v, pos));
            let w = (q1.0 - q0.0, q1.1 - q0.1);
            let wn = w.0.hypot(w.1);
            if wn > 0.0 {
                let c = (w.0 * final_ref.0 + w.1 * final_ref.1) / wn;
                if in_sector(stage, c) {
                    return Ok((
                        v,
                        PlantedError {
                            stage,
                            position: pos,
                            cosine: c,
                        },
                    ));
                }
            }
        }
        speed *= 0.7;
    }
    Err(Error::Numerical(format!(
        "could not plant a {stage} error at position {pos} inside the normalization range"
    )))
}

struct Simulated {
    u: Vec<f64>,
    sim: SimRecord,
}

fn simulate_one(spec: &SynthSpec, index: usize) -> Result<Simulated> {
    let seed = derive_seed(spec.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = rng.gen_range(spec.steps.0..=spec.steps.1);
    let x0 = match spec.potential {
        PotentialSpec::Harmonic { k, center } => {
            let amp = rng.gen_range(spec.amplitude.0..=spec.amplitude.1);
            let phase = rng.gen_range(0.0..2.0 * PI);
            (center + amp * phase.cos(), -amp * k.sqrt() * phase.sin())
        }
        PotentialSpec::Flat => {
            let top = max_uncertainty();
            let u0 = rng.gen_range(0.1 * top..0.9 * top);
            let span = (steps.max(2) - 1) as f64 * spec.dt;
            let lo = -(u0 - 0.05 * top) / span;
            let hi = (0.95 * top - u0) / span;
            (u0, rng.gen_range(lo..hi))
        }
    };
    let h = spec.dt / spec.substeps as f64;
    let states = leapfrog(|u| spec.potential.slope(u), x0, h, (steps - 1) * spec.substeps)?;
    let mut u: Vec<f64> = states.iter().step_by(spec.substeps).map(|s| s.0).collect();
    if spec.noise_level > 0.0 {
        let normal = Normal::new(0.0, spec.noise_level).map_err(|e| Error::invalid(e.to_string()))?;
        for x in &mut u {
            *x += normal.sample(&mut rng);
        }
    }
    Ok(Simulated {
        u,
        sim: SimRecord {
            dt: spec.dt,
            substeps: spec.substeps,
            x0,
            steps,
            seed,
            noise_level: spec.noise_level,
        },
    })
}

fn enforce_range(sims: &mut [Simulated], policy: RangePolicy) -> Result<()> {
    let top = max_uncertainty();
    let max = sims
        .iter()
        .flat_map(|s| s.u.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let min = sims
        .iter()
        .flat_map(|s| s.u.iter().copied())
        .fold(f64::INFINITY, f64::min);
    if max <= top && min >= 0.0 {
        return Ok(());
    }
    match policy {
        RangePolicy::Fail => Err(Error::invalid(format!(
            "simulated uncertainty range [{min:.6}, {max:.6}] leaves [0, 1/e]; use the rescale policy or shrink the amplitude"
        ))),
        RangePolicy::Rescale => {
            let scale = if max > top { top / max } else { 1.0 };
            for s in sims.iter_mut() {
                for x in &mut s.u {
                    *x = (*x * scale).max(0.0);
                }
            }
            Ok(())
        }
    }
}

fn pick_stage(mix: &[f64; 3], rng: &mut impl Rng) -> Stage {
    let total: f64 = mix.iter().sum();
    let mut r = rng.gen_range(0.0..total);
    for (w, st) in mix.iter().zip(Stage::ALL) {
        if r < *w {
            return st;
        }
        r -= w;
    }
    Stage::RationaleError
}

const EDUCATION: [&str; 3] = ["secondary", "undergraduate", "graduate"];

fn build_trace(spec: &SynthSpec, index: usize, u: &[f64], planted: Option<&PlantedError>) -> Result<Trace> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed ^ 0xA77E_5EED, index as u64));
    let steps = u
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let p = probability_for_uncertainty(x)?;
            let mut step = Step::new(k as i64 + 1, format!("step {}", k + 1));
            step.token_logprobs = Some(vec![p.ln()]);
            if let Some(pe) = planted.filter(|pe| pe.position == k) {
                step.error_label = Some(pe.stage.to_string());
            }
            Ok(step)
        })
        .collect::<Result<Vec<_>>>()?;
    let reasoning_type = [
        ReasoningType::Deductive,
        ReasoningType::Inductive,
        ReasoningType::Abductive,
    ][index % 3];
    let mut cohort = BTreeMap::new();
    let phase = if index.is_multiple_of(2) { "pre_llm" } else { "post_llm" };
    cohort.insert("phase".to_string(), CohortValue::Text(phase.into()));
    let extraversion = (rng.gen_range(2.0f64..=14.0)).round() / 2.0;
    cohort.insert("extraversion".to_string(), CohortValue::Number(extraversion));
    cohort.insert(
        "education".to_string(),
        CohortValue::Text(EDUCATION[rng.gen_range(0..EDUCATION.len())].into()),
    );
    let correctness = u
        .iter()
        .enumerate()
        .map(|(k, _)| planted.is_none_or(|pe| pe.position != k))
        .collect();
    Ok(Trace {
        id: format!("syn-{index:05}"),
        question: format!("question {}", index % spec.n_questions),
        answer: Some(format!("answer {}", rng.gen_range(0..4))),
        steps,
        meta: Annotations {
            reasoning_type,
            correctness: Some(correctness),
            cohort,
            source: Some("synthetic".into()),
            ..Default::default()
        },
        extra: Default::default(),
    })
}

/// Step embeddings: a fixed random linear map of (u, e, τ, question) plus
/// small seeded noise.
fn embed(spec: &SynthSpec, trajectories: &[Trajectory], questions: &[usize]) -> Result<Vec<EmbeddingRecord>> {
    let d = spec.embedding_dim;
    if d == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, u64::MAX));
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let w: Vec<[f64; 4]> = (0..d).map(|_| [0; 4].map(|_| normal.sample(&mut rng))).collect();
    let noise = Normal::new(0.0, 0.05).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = Vec::new();
    for (k, (t, &q)) in trajectories.iter().zip(questions).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed ^ 0xE3B3_DD00, k as u64));
        let qf = q as f64 / spec.n_questions as f64;
        for p in &t.points {
            let f = [p.u, p.e, p.tau, qf];
            let vector = w
                .iter()
                .map(|row| row.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() + noise.sample(&mut rng))
                .collect();
            out.push(EmbeddingRecord {
                trace_id: t.trace_id.clone(),
                step_index: p.step_index,
                vector,
            });
        }
    }
    Ok(out)
}

/// Generates a corpus, its ground-truth sidecar and step embeddings.
/// Identical specs produce identical output.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut sims = crate::par::map_range(spec.n_traces, |i| simulate_one(spec, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    enforce_range(&mut sims, spec.range_policy)?;

    let clean: Vec<Trajectory> = sims
        .iter()
        .enumerate()
        .map(|(i, s)| Trajectory::from_uncertainties(format!("syn-{i:05}"), &s.u, EntropyMode::Realized))
        .collect();
    let ctx = PlantContext::new(&clean, Grid::new(spec.grid.0, spec.grid.1)?)?;

    let planted: Vec<std::result::Result<Option<(Vec<f64>, PlantedError)>, String>> =
        crate::par::map_range(spec.n_traces, |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed ^ 0x9A4B_17ED, i as u64));
            if !rng.gen_bool(spec.plant.fraction) {
                return Ok(None);
            }
            let u = &sims[i].u;
            if u.len() < 3 {
                return Err("trace shorter than 3 steps".to_string());
            }
            let stage = pick_stage(&spec.plant.mix, &mut rng);
            let mut positions: Vec<usize> = (2..u.len()).collect();
            positions.shuffle(&mut rng);
            let mut last = String::new();
            for pos in positions {
                match plant_error(u, pos, stage, spec.plant.magnitude, rng.gen(), &ctx) {
                    Ok(r) => return Ok(Some(r)),
                    Err(e) => last = e.to_string(),
                }
            }
            Err(last)
        });

    let mut traces = Vec::with_capacity(spec.n_traces);
    let mut truth = Vec::with_capacity(spec.n_traces);
    let mut unplanted = Vec::new();
    let mut finals = Vec::with_capacity(spec.n_traces);
    for (i, (sim, p)) in sims.into_iter().zip(planted).enumerate() {
        let id = format!("syn-{i:05}");
        let (u, pe) = match p {
            Ok(Some((u, pe))) => (u, Some(pe)),
            Ok(None) => (sim.u, None),
            Err(why) => {
                unplanted.push((id.clone(), why));
                (sim.u, None)
            }
        };
        traces.push(build_trace(spec, i, &u, pe.as_ref())?);
        truth.push(GroundTruth {
            trace_id: id.clone(),
            planted_stage: pe.map(|p| p.stage),
            planted_step: pe.map(|p| p.position as i64 + 1),
            planted_cosine: pe.map(|p| p.cosine),
            true_potential: spec.potential,
            sim_params: sim.sim,
            u: u.clone(),
        });
        finals.push(Trajectory::from_uncertainties(id, &u, EntropyMode::Realized));
    }
    let stats = fit_normalization(&finals)?;
    for t in &mut finals {
        apply_normalization(t, &stats);
    }
    let questions: Vec<usize> = (0..spec.n_traces).map(|i| i % spec.n_questions).collect();
    let embeddings = embed(spec, &finals, &questions)?;
    Ok(SynthCorpus {
        traces,
        truth,
        embeddings,
        unplanted,
    })
}

/// Control corpus: each trace's step scores are permuted (seeded), which
/// breaks the step order while keeping per-trace value sets.
/// Correctness and error labels are dropped.
pub fn shuffled_control(traces: &[Trace], seed: u64) -> Vec<Trace> {
    traces
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let mut scores: Vec<_> = t.steps.iter().map(|s| s.token_logprobs.clone()).collect();
            scores.shuffle(&mut rng);
            let mut c = t.clone();
            c.id = format!("{}-shuffled", t.id);
            for (s, lp) in c.steps.iter_mut().zip(scores) {
                s.token_logprobs = lp;
                s.error_label = None;
            }
            c.meta.correctness = None;
            c.meta.source = Some("synthetic-shuffled".into());
            c
        })
        .collect()
}
