//! Run configuration: a JSON file whose relative paths resolve against the
//! file's directory, then command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use iftrack_core::analysis::{ClassifierConfig, ReportConfig, TestKind};
use iftrack_core::baselines::{Bandwidth, LandscapeSpec, TsneConfig};
use iftrack_core::flow::CellEstimator;
use iftrack_core::gateway::ScoringConfig;
use iftrack_core::infodyn::EntropyMode;
use iftrack_core::synth::{PotentialSpec, SynthSpec};
use iftrack_core::trace::{Filter, SchemaMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::render::Palette;

/// A named cohort: traces matching every filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortDef {
    pub name: String,
    pub filters: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub trajectories: usize,
    pub steps: usize,
    pub dtau: f64,
    pub noise_level: f64,
    pub potential: PotentialSpec,
    /// Initial energies `H0` are drawn uniformly from this range.
    pub energy: [f64; 2],
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            trajectories: 200,
            steps: 250,
            dtau: 4e-3,
            noise_level: 0.0,
            potential: PotentialSpec::Harmonic { k: 1.0, center: 0.0 },
            energy: [0.02, 0.5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub tsne: TsneConfig,
    /// Larger embedding sets are subsampled (seeded) before t-SNE.
    pub max_points: usize,
    pub landscape: LandscapeSpec,
    pub bandwidth: Bandwidth,
    pub mcq_k: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            tsne: TsneConfig::default(),
            max_points: 400,
            landscape: LandscapeSpec {
                nx: 60,
                ny: 60,
                ..Default::default()
            },
            bandwidth: Bandwidth::Scott,
            mcq_k: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Trace corpus (JSONL).
    pub input: Option<PathBuf>,
    /// Step embeddings (JSONL) for the baselines.
    pub embeddings: Option<PathBuf>,
    /// Precomputed scores (JSONL of `{"trace_id", "spans"}`).
    pub offline_scores: Option<PathBuf>,
    pub output: PathBuf,
    pub schema: SchemaMode,
    pub grid: [usize; 2],
    pub entropy_mode: EntropyMode,
    pub estimator: CellEstimator,
    pub min_count: usize,
    pub liouville_tolerance: f64,
    pub potential_min_samples: usize,
    pub classifier: ClassifierConfig,
    pub report: ReportConfig,
    pub bootstrap_n: usize,
    pub seed: u64,
    /// Conjunctive `key=value` / `key>=x` expressions applied at `track`.
    pub filters: Vec<String>,
    /// Cohorts for `compare`; empty groups by reasoning type.
    pub cohorts: Vec<CohortDef>,
    pub scoring: Option<ScoringConfig>,
    pub simulate: SimulateConfig,
    pub baseline: BaselineConfig,
    pub synth: SynthSpec,
    pub palette: Palette,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            embeddings: None,
            offline_scores: None,
            output: PathBuf::from("iftrack-out"),
            schema: SchemaMode::Strict,
            grid: [20, 20],
            entropy_mode: EntropyMode::Realized,
            estimator: CellEstimator::Affine,
            min_count: 3,
            liouville_tolerance: 1e-3,
            potential_min_samples: iftrack_core::flow::DEFAULT_MIN_SAMPLES,
            classifier: ClassifierConfig::default(),
            report: ReportConfig::default(),
            bootstrap_n: 1000,
            seed: 42,
            filters: Vec::new(),
            cohorts: Vec::new(),
            scoring: None,
            simulate: SimulateConfig::default(),
            baseline: BaselineConfig::default(),
            synth: SynthSpec::default(),
            palette: Palette::Rdbu,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub grid_nx: Option<usize>,
    pub grid_ny: Option<usize>,
    pub entropy_mode: Option<EntropyMode>,
    pub theta: Option<f64>,
    pub quantile: Option<f64>,
    pub tau_window: Option<(f64, f64)>,
    pub seed: Option<u64>,
    pub filters: Vec<String>,
    pub test: Option<TestKind>,
    pub bootstrap_n: Option<usize>,
    pub palette: Option<Palette>,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.input);
        resolve(base, &mut cfg.embeddings);
        resolve(base, &mut cfg.offline_scores);
        if let Some(s) = &mut cfg.scoring {
            resolve(base, &mut s.cache_dir);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: Overrides) {
        macro_rules! set {
            ($src:expr, $dst:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        if o.input.is_some() {
            self.input = o.input;
        }
        if o.embeddings.is_some() {
            self.embeddings = o.embeddings;
        }
        set!(o.output, self.output);
        set!(o.grid_nx, self.grid[0]);
        set!(o.grid_ny, self.grid[1]);
        set!(o.entropy_mode, self.entropy_mode);
        set!(o.theta, self.classifier.theta);
        set!(o.quantile, self.report.quantile);
        set!(o.tau_window, self.report.tau_window);
        set!(o.seed, self.seed);
        set!(o.test, self.report.test);
        set!(o.bootstrap_n, self.bootstrap_n);
        set!(o.palette, self.palette);
        if !o.filters.is_empty() {
            self.filters = o.filters;
        }
    }

    /// Checks every field, naming the first offending one.
    pub fn validate(&self) -> Result<()> {
        if self.grid[0] < 3 || self.grid[1] < 3 {
            bail!(
                "config field `grid`: each dimension must be at least 3, got {:?}",
                self.grid
            );
        }
        if self.min_count == 0 {
            bail!("config field `min_count`: must be at least 1");
        }
        if !(self.liouville_tolerance > 0.0) {
            bail!("config field `liouville_tolerance`: must be positive");
        }
        self.classifier
            .validate()
            .map_err(|e| anyhow::anyhow!("config field `classifier`: {e}"))?;
        let r = &self.report;
        if !(r.quantile > 0.0 && r.quantile < 1.0) {
            bail!("config field `quantile`: must lie in (0, 1), got {}", r.quantile);
        }
        if !(r.low_effort_quantile > 0.0 && r.low_effort_quantile < 1.0) {
            bail!("config field `report.low_effort_quantile`: must lie in (0, 1)");
        }
        let (a, b) = r.tau_window;
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a >= b {
            bail!("config field `tau_window`: need 0 <= a < b <= 1, got ({a}, {b})");
        }
        if r.grid_points < 2 {
            bail!("config field `report.grid_points`: must be at least 2");
        }
        if self.bootstrap_n == 0 {
            bail!("config field `bootstrap_n`: must be at least 1");
        }
        for f in &self.filters {
            f.parse::<Filter>()
                .map_err(|e| anyhow::anyhow!("config field `filters`: {e}"))?;
        }
        for c in &self.cohorts {
            if c.name.is_empty() {
                bail!("config field `cohorts`: cohort names must be non-empty");
            }
            for f in &c.filters {
                f.parse::<Filter>()
                    .map_err(|e| anyhow::anyhow!("config field `cohorts.{}`: {e}", c.name))?;
            }
        }
        if let Some(s) = &self.scoring {
            s.validate()
                .map_err(|e| anyhow::anyhow!("config field `scoring`: {e}"))?;
        }
        let s = &self.simulate;
        if s.trajectories == 0 || s.steps < 2 || !(s.dtau > 0.0) || !(s.noise_level >= 0.0) {
            bail!("config field `simulate`: need trajectories >= 1, steps >= 2, dtau > 0, noise_level >= 0");
        }
        if !(s.energy[0] > 0.0 && s.energy[1] >= s.energy[0]) {
            bail!("config field `simulate.energy`: need 0 < lo <= hi");
        }
        if self.baseline.max_points < 4 {
            bail!("config field `baseline.max_points`: must be at least 4");
        }
        if self.baseline.mcq_k < 2 {
            bail!("config field `baseline.mcq_k`: must be at least 2");
        }
        self.synth
            .validate()
            .map_err(|e| anyhow::anyhow!("config field `synth`: {e}"))?;
        Ok(())
    }

    pub fn parsed_filters(&self) -> Result<Vec<Filter>> {
        self.filters
            .iter()
            .map(|f| f.parse::<Filter>().map_err(anyhow::Error::from))
            .collect()
    }

    /// SHA-256 of the canonical JSON form with the output directory
    /// blanked, so runs into different directories hash alike.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn overrides_take_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"input": "traces.jsonl", "grid": [10, 12], "seed": 3}"#).unwrap();
        let mut c = RunConfig::load(&p).unwrap();
        assert_eq!(c.input.as_deref(), Some(dir.path().join("traces.jsonl").as_path()));
        assert_eq!(c.grid, [10, 12]);
        c.apply(Overrides {
            grid_nx: Some(30),
            seed: Some(9),
            tau_window: Some((0.2, 0.8)),
            ..Default::default()
        });
        assert_eq!(c.grid, [30, 12]);
        assert_eq!(c.seed, 9);
        assert_eq!(c.report.tau_window, (0.2, 0.8));
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = RunConfig::default();
        c.grid = [2, 20];
        assert!(c.validate().unwrap_err().to_string().contains("`grid`"));
        let mut c = RunConfig::default();
        c.classifier.theta = 1.5;
        assert!(c.validate().unwrap_err().to_string().contains("`classifier`"));
        let mut c = RunConfig::default();
        c.filters = vec!["nonsense".into()];
        assert!(c.validate().unwrap_err().to_string().contains("`filters`"));
        let mut c = RunConfig::default();
        c.report.tau_window = (0.7, 0.2);
        assert!(c.validate().unwrap_err().to_string().contains("`tau_window`"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"gird": [10, 10]}"#).unwrap();
        assert!(RunConfig::load(&p).is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
