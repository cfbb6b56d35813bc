use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::meantraj::{cohort_cosine, DEFAULT_GRID_POINTS};
use super::stats::{quantile, two_sample_test, TestKind, TestResult};
use crate::error::{Error, Result};
use crate::infodyn::{PhasePoint, Trajectory};

pub const DEFAULT_HIGH_QUANTILE: f64 = 0.75;
pub const DEFAULT_LOW_EFFORT_QUANTILE: f64 = 1.0 / 3.0;
pub const DEFAULT_TAU_WINDOW: (f64, f64) = (0.5, 1.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub fraction: f64,
    pub inside: usize,
    pub total: usize,
    pub per_trace: Vec<(String, f64)>,
}

/// Fraction of phase points satisfying `region`, overall and per trace.
pub fn region_occupancy(cohort: &[Trajectory], region: impl Fn(&PhasePoint) -> bool) -> Result<Occupancy> {
    let total: usize = cohort.iter().map(|t| t.points.len()).sum();
    if total == 0 {
        return Err(Error::Empty("cohort has no phase points".into()));
    }
    let mut inside = 0;
    let per_trace = cohort
        .iter()
        .map(|t| {
            let k = t.points.iter().filter(|p| region(p)).count();
            inside += k;
            let f = if t.points.is_empty() {
                0.0
            } else {
                k as f64 / t.points.len() as f64
            };
            (t.trace_id.clone(), f)
        })
        .collect();
    Ok(Occupancy {
        fraction: inside as f64 / total as f64,
        inside,
        total,
        per_trace,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub trace_id: String,
    pub mean_u: f64,
    pub max_u: f64,
    pub min_u: f64,
    pub mean_e: f64,
    pub max_e: f64,
    pub min_e: f64,
    pub high_u_ratio: f64,
    pub high_e_ratio: f64,
}

impl TrajectoryStats {
    pub const METRICS: [&'static str; 8] = [
        "mean_u",
        "max_u",
        "min_u",
        "mean_e",
        "max_e",
        "min_e",
        "high_u_ratio",
        "high_e_ratio",
    ];

    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "mean_u" => self.mean_u,
            "max_u" => self.max_u,
            "min_u" => self.min_u,
            "mean_e" => self.mean_e,
            "max_e" => self.max_e,
            "min_e" => self.min_e,
            "high_u_ratio" => self.high_u_ratio,
            "high_e_ratio" => self.high_e_ratio,
            _ => return None,
        })
    }
}

/// Corpus-level `q`-quantiles of normalized `u` and `e`.
pub fn high_thresholds(corpus: &[Trajectory], q: f64) -> Result<(f64, f64)> {
    let us: Vec<f64> = corpus.iter().flat_map(|t| t.points.iter().map(|p| p.u)).collect();
    let es: Vec<f64> = corpus.iter().flat_map(|t| t.points.iter().map(|p| p.e)).collect();
    match (quantile(&us, q), quantile(&es, q)) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::Empty("cohort has no phase points".into())),
    }
}

/// Per-trajectory descriptive statistics over normalized coordinates. A
/// point is "high" when it lies strictly above the corpus `q`-quantile.
pub fn descriptive_stats(cohort: &[Trajectory], q: f64) -> Result<Vec<TrajectoryStats>> {
    let (hu, he) = high_thresholds(cohort, q)?;
    Ok(stats_with_thresholds(cohort, hu, he))
}

fn stats_with_thresholds(cohort: &[Trajectory], hu: f64, he: f64) -> Vec<TrajectoryStats> {
    cohort
        .iter()
        .filter(|t| !t.points.is_empty())
        .map(|t| {
            let n = t.points.len() as f64;
            let us = t.points.iter().map(|p| p.u);
            let es = t.points.iter().map(|p| p.e);
            TrajectoryStats {
                trace_id: t.trace_id.clone(),
                mean_u: us.clone().sum::<f64>() / n,
                max_u: us.clone().fold(f64::NEG_INFINITY, f64::max),
                min_u: us.clone().fold(f64::INFINITY, f64::min),
                mean_e: es.clone().sum::<f64>() / n,
                max_e: es.clone().fold(f64::NEG_INFINITY, f64::max),
                min_e: es.clone().fold(f64::INFINITY, f64::min),
                high_u_ratio: us.filter(|&u| u > hu).count() as f64 / n,
                high_e_ratio: es.filter(|&e| e > he).count() as f64 / n,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub test: TestKind,
    pub quantile: f64,
    pub low_effort_quantile: f64,
    pub tau_window: (f64, f64),
    pub grid_points: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            test: TestKind::Welch,
            quantile: DEFAULT_HIGH_QUANTILE,
            low_effort_quantile: DEFAULT_LOW_EFFORT_QUANTILE,
            tau_window: DEFAULT_TAU_WINDOW,
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub name: String,
    pub n: usize,
    /// Cohort mean of each per-trajectory metric.
    pub metric_means: BTreeMap<String, f64>,
    pub low_effort_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTest {
    pub metric: String,
    pub cohort_a: String,
    pub cohort_b: String,
    pub result: Option<TestResult>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortCosine {
    pub cohort_a: String,
    pub cohort_b: String,
    pub cosine: Option<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub config: ReportConfig,
    pub high_u_threshold: f64,
    pub high_e_threshold: f64,
    pub low_effort_threshold: f64,
    pub cohorts: Vec<CohortSummary>,
    pub tests: Vec<MetricTest>,
    pub cosines: Vec<CohortCosine>,
}

/// Descriptive statistics, occupancy, pairwise tests and pairwise
/// trajectory cosines for named cohorts. Thresholds are pooled over all
/// cohorts.
pub fn cohort_report(cohorts: &BTreeMap<String, Vec<Trajectory>>, cfg: &ReportConfig) -> Result<CohortReport> {
    let pooled: Vec<Trajectory> = cohorts.values().flatten().cloned().collect();
    let (hu, he) = high_thresholds(&pooled, cfg.quantile)?;
    let es: Vec<f64> = pooled.iter().flat_map(|t| t.points.iter().map(|p| p.e)).collect();
    let low = quantile(&es, cfg.low_effort_quantile).unwrap_or(0.0);

    let mut summaries = Vec::new();
    let mut per_cohort: BTreeMap<&str, Vec<TrajectoryStats>> = BTreeMap::new();
    for (name, members) in cohorts {
        let stats = stats_with_thresholds(members, hu, he);
        let metric_means = TrajectoryStats::METRICS
            .iter()
            .map(|m| {
                let v: f64 = stats.iter().filter_map(|s| s.metric(m)).sum::<f64>() / stats.len().max(1) as f64;
                (m.to_string(), v)
            })
            .collect();
        let low_effort_fraction = region_occupancy(members, |p| p.e < low)
            .map(|o| o.fraction)
            .unwrap_or(0.0);
        summaries.push(CohortSummary {
            name: name.clone(),
            n: members.len(),
            metric_means,
            low_effort_fraction,
        });
        per_cohort.insert(name, stats);
    }

    let names: Vec<&String> = cohorts.keys().collect();
    let mut tests = Vec::new();
    let mut cosines = Vec::new();
    for (x, a) in names.iter().enumerate() {
        for b in &names[x + 1..] {
            for metric in TrajectoryStats::METRICS {
                let sa: Vec<f64> = per_cohort[a.as_str()].iter().filter_map(|s| s.metric(metric)).collect();
                let sb: Vec<f64> = per_cohort[b.as_str()].iter().filter_map(|s| s.metric(metric)).collect();
                let (result, note) = match two_sample_test(cfg.test, &sa, &sb) {
                    Ok(r) => (Some(r), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                tests.push(MetricTest {
                    metric: metric.into(),
                    cohort_a: a.to_string(),
                    cohort_b: b.to_string(),
                    result,
                    note,
                });
            }
            let (cosine, note) = match cohort_cosine(&cohorts[*a], &cohorts[*b], cfg.tau_window, cfg.grid_points) {
                Ok(c) => (Some(c), None),
                Err(e) => (None, Some(e.to_string())),
            };
            cosines.push(CohortCosine {
                cohort_a: a.to_string(),
                cohort_b: b.to_string(),
                cosine,
                note,
            });
        }
    }
    Ok(CohortReport {
        config: cfg.clone(),
        high_u_threshold: hu,
        high_e_threshold: he,
        low_effort_threshold: low,
        cohorts: summaries,
        tests,
        cosines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infodyn::EntropyMode;
    use approx::assert_abs_diff_eq;

    fn traj(id: &str, ue: &[(f64, f64)]) -> Trajectory {
        let n = ue.len().max(2);
        Trajectory {
            trace_id: id.into(),
            points: ue
                .iter()
                .enumerate()
                .map(|(k, &(u, e))| PhasePoint {
                    step_index: k as i64 + 1,
                    tau: k as f64 / (n - 1) as f64,
                    u_raw: u,
                    e_raw: e,
                    u,
                    e,
                    origin: k == 0,
                })
                .collect(),
            entropy_mode: EntropyMode::Realized,
        }
    }

    #[test]
    fn occupancy_examples() {
        let c = vec![traj("a", &[(0.1, 0.1); 4])];
        assert_eq!(region_occupancy(&c, |p| p.e < 0.33).unwrap().fraction, 1.0);
        assert_eq!(region_occupancy(&c, |_| false).unwrap().fraction, 0.0);
        let c = vec![traj("a", &[(0.1, 0.1), (0.5, 0.6)]), traj("b", &[(0.9, 0.2)])];
        let inside = region_occupancy(&c, |p| p.u < 0.5).unwrap();
        let outside = region_occupancy(&c, |p| p.u >= 0.5).unwrap();
        assert_abs_diff_eq!(inside.fraction + outside.fraction, 1.0);
        assert_eq!(inside.per_trace, vec![("a".to_string(), 0.5), ("b".to_string(), 0.0)]);
    }

    #[test]
    fn constant_trajectory_stats() {
        let s = descriptive_stats(&[traj("a", &[(0.4, 0.5); 5])], 0.75).unwrap();
        assert_eq!((s[0].mean_u, s[0].max_u, s[0].min_u), (0.4, 0.4, 0.4));
        assert_eq!(s[0].high_u_ratio, 0.0);
    }

    #[test]
    fn half_above_threshold() {
        let c = vec![traj("a", &[(0.1, 0.0), (0.2, 0.0), (0.8, 0.0), (0.9, 0.0)])];
        let s = descriptive_stats(&c, 0.5).unwrap();
        assert_eq!(s[0].high_u_ratio, 0.5);
    }

    #[test]
    fn report_covers_every_pair_and_metric() {
        let mut cohorts = BTreeMap::new();
        cohorts.insert(
            "a".to_string(),
            (0..5)
                .map(|k| {
                    traj(
                        &format!("a{k}"),
                        &[(0.1, 0.2), (0.3 + 0.01 * k as f64, 0.4), (0.5, 0.9)],
                    )
                })
                .collect::<Vec<_>>(),
        );
        cohorts.insert(
            "b".to_string(),
            (0..4)
                .map(|k| {
                    traj(
                        &format!("b{k}"),
                        &[(0.7, 0.2), (0.6 - 0.02 * k as f64, 0.5), (0.2, 0.1)],
                    )
                })
                .collect(),
        );
        cohorts.insert("c".to_string(), vec![traj("c0", &[(0.5, 0.5), (0.5, 0.6)])]);
        let r = cohort_report(&cohorts, &ReportConfig::default()).unwrap();
        assert_eq!(r.cohorts.len(), 3);
        assert_eq!(r.tests.len(), 3 * TrajectoryStats::METRICS.len());
        assert_eq!(r.cosines.len(), 3);
        let ab = r
            .tests
            .iter()
            .find(|t| t.metric == "mean_u" && t.cohort_b == "b")
            .unwrap();
        let p = ab.result.unwrap().p;
        assert!((0.0..=1.0).contains(&p) && p < 0.01);
        // cohort c has a single trajectory
        assert!(r.tests.iter().filter(|t| t.cohort_b == "c").all(|t| t.result.is_none()));
    }
}
