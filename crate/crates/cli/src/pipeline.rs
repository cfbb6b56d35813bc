//! Subcommands. Each writes only under `<output>/<name>/` and finishes with
//! a `manifest.json` there; downstream commands read upstream artifacts
//! from their fixed locations.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use iftrack_core::analysis::{classify_traces, cohort_report, mean_trajectory, stage_distribution, MeanTrajectory};
use iftrack_core::baselines::{kde_landscape, load_embeddings, pseudo_mcq, tsne};
use iftrack_core::flow::{
    corpus_velocities, discrete_divergence, hamiltonian_energy, liouville_report, reconstruct_potential,
    simulate_ensemble, DivergenceMap, FieldOptions, FlowField, Grid, SimulationParams,
};
use iftrack_core::gateway::{merge_offline_scores, ScoredSpan, Scorer};
use iftrack_core::infodyn::{apply_normalization, fit_normalization, track_corpus, Trajectory};
use iftrack_core::synth::{generate, shuffled_control, PotentialSpec};
use iftrack_core::tables;
use iftrack_core::trace::{corpus_summary, load_corpus, matches_all, write_corpus, Filter, SchemaMode, Trace};
use iftrack_core::{par, Error as CoreError};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::manifest::{Manifest, MANIFEST};
use crate::render::{
    render_heatmap, render_mean_trajectories, render_quiver, render_trajectories, HeatmapData, Palette, QuiverStyle,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Ingest,
    Score,
    Track,
    Flow,
    Hamiltonian,
    Simulate,
    Classify,
    Compare,
    Baseline,
    Render,
    /// Generate the synthetic corpus, its ground truth and embeddings.
    Synth,
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Score => "score",
            Command::Track => "track",
            Command::Flow => "flow",
            Command::Hamiltonian => "hamiltonian",
            Command::Simulate => "simulate",
            Command::Classify => "classify",
            Command::Compare => "compare",
            Command::Baseline => "baseline",
            Command::Render => "render",
            Command::Synth => "synth",
            Command::All => "all",
        }
    }
}

/// Stages run by `all`, in order.
pub const ALL_STAGES: [Command; 10] = [
    Command::Ingest,
    Command::Score,
    Command::Track,
    Command::Flow,
    Command::Hamiltonian,
    Command::Simulate,
    Command::Classify,
    Command::Compare,
    Command::Baseline,
    Command::Render,
];

struct Run<'a> {
    cfg: &'a RunConfig,
    root: PathBuf,
    hash: String,
}

struct Stage {
    name: &'static str,
    dir: PathBuf,
    manifest: Manifest,
}

impl Stage {
    fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    fn rel(&self, file: &str) -> String {
        format!("{}/{file}", self.name)
    }

    fn record(&mut self, root: &Path, file: &str) -> Result<()> {
        self.manifest.output(root, &self.rel(file))
    }

    fn write_json<T: Serialize>(&mut self, root: &Path, file: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path(file), text).with_context(|| format!("writing {}", self.rel(file)))?;
        self.record(root, file)
    }

    fn write_svg(&mut self, root: &Path, file: &str, svg: crate::render::Svg) -> Result<()> {
        fs::write(self.path(file), &svg.text).with_context(|| format!("writing {}", self.rel(file)))?;
        self.manifest
            .warn(&format!("{file}: points clipped to frame"), svg.clipped as u64);
        self.record(root, file)
    }
}

impl<'a> Run<'a> {
    fn stage(&self, cmd: Command) -> Result<Stage> {
        let dir = self.root.join(cmd.name());
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Stage {
            name: cmd.name(),
            dir,
            manifest: Manifest::new(cmd.name(), &self.hash),
        })
    }

    /// Upstream artifact `rel`, or an error naming the missing file.
    fn upstream(&self, rel: &str, hint: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if p.is_file() {
            Ok(p)
        } else {
            let file = rel.rsplit('/').next().unwrap_or(rel);
            bail!("missing {file} (expected {}; run `iftrack {hint}` first)", p.display())
        }
    }

    fn grid(&self) -> Result<Grid> {
        Ok(Grid::new(self.cfg.grid[0], self.cfg.grid[1])?)
    }

    fn field_options(&self) -> FieldOptions {
        FieldOptions {
            estimator: self.cfg.estimator,
            min_count: self.cfg.min_count,
        }
    }

    /// Scored traces if present, otherwise ingested ones.
    fn traces(&self, st: &mut Stage) -> Result<Vec<Trace>> {
        let rel = ["score/traces.jsonl", "ingest/traces.jsonl"]
            .into_iter()
            .find(|r| self.root.join(r).is_file())
            .ok_or_else(|| anyhow!("missing traces.jsonl (run `iftrack ingest` first)"))?;
        let path = self.root.join(rel);
        st.manifest.input(rel, &path)?;
        Ok(load_corpus(&path, SchemaMode::Strict)?.traces)
    }

    fn trajectories(&self, st: &mut Stage) -> Result<Vec<Trajectory>> {
        let path = self.upstream("track/trajectories.csv", "track")?;
        st.manifest.input("track/trajectories.csv", &path)?;
        Ok(tables::read_trajectories(&path)?)
    }

    fn finish(&self, st: Stage) -> Result<Manifest> {
        st.manifest.write(&st.dir.join(MANIFEST))?;
        Ok(st.manifest)
    }
}

/// Runs `cmd` and returns its manifest. `all` also writes a combined
/// manifest at the output root.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Manifest> {
    cfg.validate()?;
    let run = Run {
        cfg,
        root: cfg.output.clone(),
        hash: cfg.hash(),
    };
    fs::create_dir_all(&run.root).with_context(|| format!("creating {}", run.root.display()))?;
    match cmd {
        Command::All => run_all(&run),
        c => run_one(&run, c),
    }
}

fn run_one(run: &Run, cmd: Command) -> Result<Manifest> {
    let mut st = run.stage(cmd)?;
    match cmd {
        Command::Ingest => ingest(run, &mut st)?,
        Command::Score => score(run, &mut st)?,
        Command::Track => track(run, &mut st)?,
        Command::Flow => flow(run, &mut st)?,
        Command::Hamiltonian => hamiltonian(run, &mut st)?,
        Command::Simulate => simulate(run, &mut st)?,
        Command::Classify => classify(run, &mut st)?,
        Command::Compare => compare(run, &mut st)?,
        Command::Baseline => baseline(run, &mut st)?,
        Command::Render => render(run, &mut st)?,
        Command::Synth => synth(run, &mut st)?,
        Command::All => unreachable!("handled by run_all"),
    }
    run.finish(st)
}

fn run_all(run: &Run) -> Result<Manifest> {
    let mut top = Manifest::new("all", &run.hash);
    for cmd in ALL_STAGES {
        if cmd == Command::Baseline && run.cfg.embeddings.is_none() {
            top.notes.push("baseline skipped: no embeddings configured".into());
            continue;
        }
        log::info!("running {}", cmd.name());
        let m = run_one(run, cmd).with_context(|| format!("stage {}", cmd.name()))?;
        for (k, v) in m.inputs {
            // artifacts of earlier stages are outputs, not inputs
            if !top.outputs.contains_key(&k) {
                top.inputs.entry(k).or_insert(v);
            }
        }
        top.outputs.extend(m.outputs);
        for (k, v) in m.warnings {
            top.warn(&format!("{}: {k}", cmd.name()), v);
        }
        top.notes
            .extend(m.notes.into_iter().map(|n| format!("{}: {n}", cmd.name())));
    }
    top.write(&run.root.join(MANIFEST))?;
    Ok(top)
}

fn ingest(run: &Run, st: &mut Stage) -> Result<()> {
    let input = run
        .cfg
        .input
        .as_ref()
        .ok_or_else(|| anyhow!("config field `input`: no trace corpus given"))?;
    st.manifest.input(input.display().to_string(), input)?;
    let loaded = load_corpus(input, run.cfg.schema)?;
    st.manifest.warn("lines skipped", loaded.skipped.len() as u64);
    st.manifest.warn("probabilities clamped", loaded.clamped as u64);
    write_corpus(&st.path("traces.jsonl"), &loaded.traces)?;
    st.record(&run.root, "traces.jsonl")?;
    let summary = json!({
        "lines": loaded.lines,
        "loaded": loaded.traces.len(),
        "skipped": loaded.skipped,
        "clamped": loaded.clamped,
        "corpus": corpus_summary(&loaded.traces)?,
    });
    st.write_json(&run.root, "summary.json", &summary)
}

#[derive(Debug, Deserialize)]
struct OfflineScores {
    trace_id: String,
    spans: Vec<ScoredSpan>,
}

fn load_offline(path: &Path) -> Result<HashMap<String, Vec<ScoredSpan>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = HashMap::new();
    for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: OfflineScores = serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), k + 1))?;
        if out.insert(rec.trace_id.clone(), rec.spans).is_some() {
            bail!("{}:{}: duplicate scores for {}", path.display(), k + 1, rec.trace_id);
        }
    }
    Ok(out)
}

fn score(run: &Run, st: &mut Stage) -> Result<()> {
    let path = run.upstream("ingest/traces.jsonl", "ingest")?;
    st.manifest.input("ingest/traces.jsonl", &path)?;
    let mut traces = load_corpus(&path, SchemaMode::Strict)?.traces;
    let mut failures: Vec<serde_json::Value> = Vec::new();

    if let Some(p) = &run.cfg.offline_scores {
        st.manifest.input(p.display().to_string(), p)?;
        let offline = load_offline(p)?;
        for t in traces.iter_mut().filter(|t| !t.is_scored()) {
            if let Some(spans) = offline.get(&t.id) {
                match merge_offline_scores(t, spans) {
                    Ok(s) => *t = s,
                    Err(e) => failures.push(json!({"trace_id": t.id, "error": e.to_string()})),
                }
            }
        }
    }
    let pending: Vec<usize> = (0..traces.len()).filter(|&k| !traces[k].is_scored()).collect();
    match &run.cfg.scoring {
        Some(sc) if !pending.is_empty() => {
            let scorer = Scorer::new(sc.clone().with_env_key())?;
            let todo: Vec<Trace> = pending.iter().map(|&k| traces[k].clone()).collect();
            for (k, r) in pending.iter().zip(scorer.score_corpus(&todo)) {
                match r {
                    Ok(t) => traces[*k] = t,
                    Err(e) => failures.push(json!({"trace_id": traces[*k].id, "error": e.to_string()})),
                }
            }
            st.manifest.notes.push(format!("scored with model {:?}", sc.model_name));
        }
        _ => {}
    }
    let unscored = traces.iter().filter(|t| !t.is_scored()).count();
    st.manifest.warn("traces left unscored", unscored as u64);
    write_corpus(&st.path("traces.jsonl"), &traces)?;
    st.record(&run.root, "traces.jsonl")?;
    st.write_json(&run.root, "failures.json", &failures)
}

fn track(run: &Run, st: &mut Stage) -> Result<()> {
    let traces = run.traces(st)?;
    let filters: Vec<Filter> = run.cfg.parsed_filters()?;
    let selected: Vec<Trace> = traces.into_iter().filter(|t| matches_all(&filters, t)).collect();
    let (scored, unscored): (Vec<Trace>, Vec<Trace>) = selected.into_iter().partition(Trace::is_scored);
    st.manifest.warn("unscored traces skipped", unscored.len() as u64);
    if scored.is_empty() {
        bail!("no scored traces to track");
    }
    let (trajs, stats) = track_corpus(&scored, run.cfg.entropy_mode)?;
    tables::write_trajectories(&st.path("trajectories.csv"), &trajs)?;
    st.record(&run.root, "trajectories.csv")?;
    st.write_json(
        &run.root,
        "normalization.json",
        &json!({"entropy_mode": run.cfg.entropy_mode, "stats": stats, "traces": trajs.len()}),
    )
}

/// Field and divergence of `trajs`; an all-undefined map when no interior
/// cell qualifies.
fn field_and_divergence(run: &Run, trajs: &[Trajectory], st: &mut Stage) -> Result<(FlowField, DivergenceMap)> {
    let samples = corpus_velocities(trajs);
    let field = iftrack_core::flow::accumulate_field(&samples, run.grid()?, run.field_options())?;
    st.manifest
        .warn("velocity samples outside the unit square", field.dropped as u64);
    let div = match discrete_divergence(&field) {
        Ok(d) => d,
        Err(CoreError::Empty(why)) => {
            st.manifest
                .notes
                .push(format!("divergence undefined everywhere: {why}"));
            DivergenceMap {
                grid: field.grid,
                values: vec![None; field.grid.len()],
            }
        }
        Err(e) => return Err(e.into()),
    };
    Ok((field, div))
}

fn write_field(
    run: &Run,
    st: &mut Stage,
    field: &FlowField,
    div: &DivergenceMap,
    extra: serde_json::Value,
) -> Result<()> {
    tables::write_flowfield(&st.path("flowfield.csv"), field)?;
    st.record(&run.root, "flowfield.csv")?;
    tables::write_divergence(&st.path("divergence.csv"), div)?;
    st.record(&run.root, "divergence.csv")?;
    let report = (div.defined().count() > 0).then(|| liouville_report(div, run.cfg.liouville_tolerance));
    let mut summary = json!({
        "grid": run.cfg.grid,
        "estimator": run.cfg.estimator,
        "min_count": run.cfg.min_count,
        "non_empty_cells": field.non_empty(),
        "dropped_samples": field.dropped,
        "mean_speed": field.mean_speed(),
        "liouville": report,
    });
    if let (Some(obj), serde_json::Value::Object(more)) = (summary.as_object_mut(), extra) {
        obj.extend(more);
    }
    st.write_json(&run.root, "liouville.json", &summary)
}

fn flow(run: &Run, st: &mut Stage) -> Result<()> {
    let trajs = run.trajectories(st)?;
    let (field, div) = field_and_divergence(run, &trajs, st)?;
    write_field(run, st, &field, &div, json!({}))
}

fn hamiltonian(run: &Run, st: &mut Stage) -> Result<()> {
    let trajs = run.trajectories(st)?;
    let samples = corpus_velocities(&trajs);
    let profile = reconstruct_potential(&samples, run.cfg.grid[0], run.cfg.potential_min_samples)?;
    tables::write_potential(&st.path("potential.csv"), &profile)?;
    st.record(&run.root, "potential.csv")?;
    // spread of H along each trajectory against its spread over the corpus
    let mut all = Vec::new();
    let mut within = Vec::new();
    for t in &trajs {
        let hs: Vec<f64> = t
            .points
            .iter()
            .filter(|p| !p.origin)
            .filter_map(|p| hamiltonian_energy(p.u, p.e, &profile).ok())
            .collect();
        if hs.len() >= 2 {
            within.push(std_dev(&hs));
        }
        all.extend(hs);
    }
    let retained = profile.potential.iter().filter(|p| p.is_some()).count();
    st.write_json(
        &run.root,
        "energy.json",
        &json!({
            "bins": profile.centers.len(),
            "retained_bins": retained,
            "min_samples": run.cfg.potential_min_samples,
            "mean_within_trajectory_std": (!within.is_empty()).then(|| within.iter().sum::<f64>() / within.len() as f64),
            "corpus_std": (all.len() >= 2).then(|| std_dev(&all)),
        }),
    )
}

fn std_dev(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1).max(1) as f64).sqrt()
}

/// Initial states spread over energies and phases, deterministic in `seed`.
fn initial_states(spec: &crate::config::SimulateConfig, seed: u64) -> Vec<(f64, f64)> {
    let n = spec.trajectories;
    // golden-ratio sequences give an even, reproducible spread
    const PHI: f64 = 0.618_033_988_749_894_8;
    let offset = (par::derive_seed(seed, 0) >> 11) as f64 / (1u64 << 53) as f64;
    (0..n)
        .map(|k| {
            let a = (offset + k as f64 * PHI).fract();
            let b = ((k as f64 + 0.5) / n as f64).fract();
            let h0 = spec.energy[0] + b * (spec.energy[1] - spec.energy[0]);
            let phase = std::f64::consts::TAU * a;
            match spec.potential {
                PotentialSpec::Harmonic { k, center } => {
                    let amp = (2.0 * h0 / k).sqrt();
                    (center + amp * phase.cos(), (2.0 * h0).sqrt() * phase.sin())
                }
                PotentialSpec::Flat => (a, if b < 0.5 { 1.0 } else { -1.0 } * (2.0 * h0).sqrt()),
            }
        })
        .collect()
}

fn simulate(run: &Run, st: &mut Stage) -> Result<()> {
    let spec = &run.cfg.simulate;
    let potential = spec.potential;
    let params = SimulationParams {
        dtau: spec.dtau,
        steps: spec.steps,
        seed: run.cfg.seed,
        noise_level: spec.noise_level,
    };
    let init = initial_states(spec, run.cfg.seed);
    let mut trajs = simulate_ensemble(|u| potential.slope(u), &init, &params)?;
    let drift = trajs
        .iter()
        .map(|t| {
            let h = |p: &iftrack_core::infodyn::PhasePoint| 0.5 * p.e_raw * p.e_raw + potential.value(p.u_raw);
            let h0 = h(&t.points[0]);
            t.points.iter().map(|p| ((h(p) - h0) / h0).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    let stats = fit_normalization(&trajs)?;
    for t in &mut trajs {
        apply_normalization(t, &stats);
    }
    tables::write_trajectories(&st.path("trajectories.csv"), &trajs)?;
    st.record(&run.root, "trajectories.csv")?;
    let (field, div) = field_and_divergence(run, &trajs, st)?;
    let profile = reconstruct_potential(
        &corpus_velocities(&trajs),
        run.cfg.grid[0],
        run.cfg.potential_min_samples,
    )?;
    tables::write_potential(&st.path("potential.csv"), &profile)?;
    st.record(&run.root, "potential.csv")?;
    write_field(
        run,
        st,
        &field,
        &div,
        json!({"simulation": spec, "normalization": stats, "max_relative_energy_drift": drift}),
    )
}

fn aligned(traces: Vec<Trace>, trajs: Vec<Trajectory>) -> (Vec<Trace>, Vec<Trajectory>) {
    let mut by_id: HashMap<String, Trace> = traces.into_iter().map(|t| (t.id.clone(), t)).collect();
    trajs
        .into_iter()
        .filter_map(|tr| by_id.remove(&tr.trace_id).map(|t| (t, tr)))
        .unzip()
}

fn classify(run: &Run, st: &mut Stage) -> Result<()> {
    let trajs = run.trajectories(st)?;
    let traces = run.traces(st)?;
    let (traces, trajs) = aligned(traces, trajs);
    let (reference, out) = classify_traces(&traces, &trajs, run.grid()?, run.field_options(), &run.cfg.classifier)?;
    st.manifest.warn("error steps not classified", out.skipped.len() as u64);
    tables::write_stages(&st.path("stages.csv"), &out.steps)?;
    st.record(&run.root, "stages.csv")?;
    let skipped: Vec<_> = out
        .skipped
        .iter()
        .map(|(id, step, why)| json!({"trace_id": id, "step_index": step, "reason": why}))
        .collect();
    st.write_json(
        &run.root,
        "distribution.json",
        &json!({
            "theta": run.cfg.classifier.theta,
            "reference_segments": reference.samples.len(),
            "reference_cells": reference.field.non_empty(),
            "distribution": stage_distribution(&out.steps),
            "skipped": skipped,
        }),
    )
}

fn cohorts(run: &Run, traces: &[Trace], trajs: &[Trajectory]) -> Result<BTreeMap<String, Vec<Trajectory>>> {
    let by_id: HashMap<&str, &Trace> = traces.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut out: BTreeMap<String, Vec<Trajectory>> = BTreeMap::new();
    if run.cfg.cohorts.is_empty() {
        for tr in trajs {
            let Some(t) = by_id.get(tr.trace_id.as_str()) else {
                continue;
            };
            let key = t.meta.reasoning_type.as_str();
            if key != "none" {
                out.entry(key.to_string()).or_default().push(tr.clone());
            }
        }
        if out.is_empty() {
            out.insert("all".into(), trajs.to_vec());
        }
    } else {
        for c in &run.cfg.cohorts {
            let filters: Vec<Filter> = c.filters.iter().map(|f| f.parse()).collect::<Result<_, _>>()?;
            let members: Vec<Trajectory> = trajs
                .iter()
                .filter(|tr| {
                    by_id
                        .get(tr.trace_id.as_str())
                        .is_some_and(|t| matches_all(&filters, t))
                })
                .cloned()
                .collect();
            out.insert(c.name.clone(), members);
        }
    }
    Ok(out)
}

fn compare(run: &Run, st: &mut Stage) -> Result<()> {
    let trajs = run.trajectories(st)?;
    let traces = run.traces(st)?;
    let mut groups = cohorts(run, &traces, &trajs)?;
    let empty: Vec<String> = groups
        .iter()
        .filter(|(_, v)| v.is_empty())
        .map(|(k, _)| k.clone())
        .collect();
    for name in empty {
        st.manifest.notes.push(format!("cohort {name:?} is empty"));
        groups.remove(&name);
    }
    if groups.is_empty() {
        bail!("no non-empty cohort to compare");
    }
    let report = cohort_report(&groups, &run.cfg.report)?;
    st.write_json(&run.root, "report.json", &report)?;
    let mut means: Vec<(String, MeanTrajectory)> = Vec::new();
    for (k, (name, members)) in groups.iter().enumerate() {
        let seed = par::derive_seed(run.cfg.seed, k as u64);
        match mean_trajectory(members, run.cfg.report.grid_points, run.cfg.bootstrap_n, seed) {
            Ok(m) => means.push((name.clone(), m)),
            Err(e) => st.manifest.notes.push(format!("no mean trajectory for {name:?}: {e}")),
        }
    }
    tables::write_meants(&st.path("meants.csv"), &means)?;
    st.record(&run.root, "meants.csv")
}

fn baseline(run: &Run, st: &mut Stage) -> Result<()> {
    let bc = &run.cfg.baseline;
    let path = run
        .cfg
        .embeddings
        .as_ref()
        .ok_or_else(|| anyhow!("config field `embeddings`: no embedding file given"))?;
    st.manifest.input(path.display().to_string(), path)?;
    let records = load_embeddings(path)?;
    let n = records.len();
    let chosen: Vec<usize> = if n > bc.max_points {
        st.manifest
            .notes
            .push(format!("t-SNE on {} of {n} embeddings (even stride)", bc.max_points));
        (0..bc.max_points).map(|k| k * n / bc.max_points).collect()
    } else {
        (0..n).collect()
    };
    let data: Vec<Vec<f64>> = chosen.iter().map(|&k| records[k].vector.clone()).collect();
    let keys: Vec<(String, i64)> = chosen
        .iter()
        .map(|&k| (records[k].trace_id.clone(), records[k].step_index))
        .collect();
    let result = tsne(&data, &bc.tsne)?;
    tables::write_tsne(&st.path("tsne.csv"), &keys, &result.coords)?;
    st.record(&run.root, "tsne.csv")?;
    let grid = kde_landscape(&result.coords, bc.bandwidth, bc.landscape)?;
    tables::write_landscape(&st.path("landscape.csv"), &grid)?;
    st.record(&run.root, "landscape.csv")?;
    st.write_json(
        &run.root,
        "tsne.json",
        &json!({
            "points": chosen.len(),
            "available": n,
            "kl": result.kl,
            "kl_after_exaggeration": result.kl_after_exaggeration,
            "max_entropy_error": result.max_entropy_error,
            "bandwidth": grid.bandwidth,
            "config": result.config,
        }),
    )?;
    let traces = run.traces(st)?;
    let mcq = pseudo_mcq(&traces, bc.mcq_k, run.cfg.seed)?;
    st.write_json(&run.root, "mcq.json", &mcq)
}

/// Figures from whichever upstream tables exist.
fn render(run: &Run, st: &mut Stage) -> Result<()> {
    let grid = run.grid()?;
    let palette = run.cfg.palette;
    let mut drawn = 0;
    let root = run.root.clone();
    let have = |rel: &str| root.join(rel).is_file();

    for (prefix, label) in [("flow", "corpus"), ("simulate", "simulated")] {
        let rel = format!("{prefix}/flowfield.csv");
        if have(&rel) {
            let p = root.join(&rel);
            st.manifest.input(&rel, &p)?;
            let field = tables::read_flowfield(&p, grid, run.cfg.min_count)?;
            let svg = render_quiver(&field, QuiverStyle::default(), &format!("Flow field ({label})"))?;
            st.write_svg(&root, &format!("{prefix}_quiver.svg"), svg)?;
            drawn += 1;
        }
        let rel = format!("{prefix}/divergence.csv");
        if have(&rel) {
            let p = root.join(&rel);
            st.manifest.input(&rel, &p)?;
            let div = tables::read_divergence(&p, grid)?;
            if div.defined().count() > 0 {
                let svg = render_heatmap(
                    &HeatmapData::divergence(&div),
                    palette,
                    ("uncertainty u", "effort e"),
                    &[],
                    &format!("Divergence ({label})"),
                )?;
                st.write_svg(&root, &format!("{prefix}_divergence.svg"), svg)?;
                drawn += 1;
            } else {
                st.manifest
                    .notes
                    .push(format!("{rel}: no defined cell, figure skipped"));
            }
        }
    }
    if have("track/trajectories.csv") {
        let trajs = run.trajectories(st)?;
        let svg = render_trajectories(&trajs, "Trajectories")?;
        st.write_svg(&root, "trajectories.svg", svg)?;
        drawn += 1;
    }
    if have("compare/meants.csv") {
        let p = root.join("compare/meants.csv");
        st.manifest.input("compare/meants.csv", &p)?;
        let means = tables::read_meants(&p)?;
        if !means.is_empty() {
            let svg = render_mean_trajectories(&means, "Mean trajectories")?;
            st.write_svg(&root, "meants.svg", svg)?;
            drawn += 1;
        }
    }
    if have("baseline/landscape.csv") && have("baseline/tsne.csv") {
        for rel in ["baseline/landscape.csv", "baseline/tsne.csv"] {
            st.manifest.input(rel, &root.join(rel))?;
        }
        let grid = tables::read_landscape(&root.join("baseline/landscape.csv"))?;
        let pts = tables::read_tsne(&root.join("baseline/tsne.csv"))?;
        let mut lines: BTreeMap<&str, Vec<(i64, [f64; 2])>> = BTreeMap::new();
        for ((id, step), xy) in &pts {
            lines.entry(id.as_str()).or_default().push((*step, *xy));
        }
        let overlay: Vec<Vec<[f64; 2]>> = lines
            .into_values()
            .filter(|v| v.len() >= 2)
            .take(12)
            .map(|mut v| {
                v.sort_by_key(|p| p.0);
                v.into_iter().map(|p| p.1).collect()
            })
            .collect();
        let seq = if palette == Palette::Greys {
            Palette::Greys
        } else {
            Palette::Viridis
        };
        let svg = render_heatmap(
            &HeatmapData::landscape(&grid),
            seq,
            ("t-SNE 1", "t-SNE 2"),
            &overlay,
            "Landscape",
        )?;
        st.write_svg(&root, "landscape.svg", svg)?;
        drawn += 1;
    }
    if drawn == 0 {
        bail!("nothing to render: no upstream tables found under {}", root.display());
    }
    Ok(())
}

fn synth(run: &Run, st: &mut Stage) -> Result<()> {
    let corpus = generate(&run.cfg.synth)?;
    write_corpus(&st.path("traces.jsonl"), &corpus.traces)?;
    st.record(&run.root, "traces.jsonl")?;
    let mut truth = String::new();
    for g in &corpus.truth {
        truth.push_str(&serde_json::to_string(g)?);
        truth.push('\n');
    }
    fs::write(st.path("truth.jsonl"), truth)?;
    st.record(&run.root, "truth.jsonl")?;
    iftrack_core::baselines::write_embeddings(&st.path("embeddings.jsonl"), &corpus.embeddings)?;
    st.record(&run.root, "embeddings.jsonl")?;
    let control = shuffled_control(&corpus.traces, par::derive_seed(run.cfg.synth.seed, u64::MAX));
    write_corpus(&st.path("control.jsonl"), &control)?;
    st.record(&run.root, "control.jsonl")?;
    st.manifest
        .warn("traces without a planted error", corpus.unplanted.len() as u64);
    st.write_json(&run.root, "spec.json", &run.cfg.synth)
}
