use std::collections::BTreeMap;

use proptest::prelude::*;

use iftrack_core::analysis::classify::{cosine, stage_for_cosine, Stage};
use iftrack_core::analysis::cohort::region_occupancy;
use iftrack_core::analysis::{mean_trajectory, welch_test};
use iftrack_core::baselines::{kde_landscape, pseudo_mcq, tsne, Bandwidth, LandscapeSpec, TsneConfig};
use iftrack_core::flow::{
    accumulate_field, discrete_divergence, leapfrog, FieldAccumulator, FieldOptions, FlowField, Grid, VelocitySample,
};
use iftrack_core::infodyn::{apply_normalization, build_trajectory, fit_normalization, EntropyMode, Trajectory};
use iftrack_core::synth::{generate, SynthSpec};
use iftrack_core::trace::{read_corpus, validate_trace, write_corpus_to, SchemaMode, Step, Trace};

fn trace_strategy() -> impl Strategy<Value = Trace> {
    let step = (
        prop::collection::vec(-20.0f64..=0.0, 1..5),
        prop::option::of("[a-z_]{1,8}"),
    );
    (
        prop::collection::vec(step, 1..6),
        "[a-z][a-z ]{0,11}",
        prop::option::of("[a-z]{1,6}"),
    )
        .prop_map(|(steps, q, ans)| {
            let steps = steps
                .into_iter()
                .enumerate()
                .map(|(k, (lp, label))| {
                    let mut s = Step::new(k as i64 + 1, format!("step {k}"));
                    s.token_logprobs = Some(lp);
                    s.error_label = label;
                    s
                })
                .collect();
            Trace {
                id: String::new(),
                question: q,
                answer: ans,
                steps,
                meta: Default::default(),
                extra: Default::default(),
            }
        })
}

fn uncertainty_series() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0f64..0.36, 2..12), 1..6)
}

fn trajectories(series: &[Vec<f64>]) -> Vec<Trajectory> {
    series
        .iter()
        .enumerate()
        .map(|(k, u)| Trajectory::from_uncertainties(format!("t{k}"), u, EntropyMode::Realized))
        .collect()
}

fn samples_strategy() -> impl Strategy<Value = Vec<VelocitySample>> {
    prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, -3.0f64..3.0, -3.0f64..3.0), 1..200).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(k, (u, e, v1, v2))| VelocitySample {
                u,
                e,
                v1,
                v2,
                tau: 0.5,
                step_index: k as i64,
            })
            .collect()
    })
}

fn fields_close(a: &FlowField, b: &FlowField, tol: f64) -> bool {
    a.cells.iter().zip(&b.cells).all(|(x, y)| {
        x.count == y.count
            && (x.v1_mean - y.v1_mean).abs() <= tol
            && (x.v2_mean - y.v2_mean).abs() <= tol
            && (x.v1_center - y.v1_center).abs() <= tol
            && (x.v2_center - y.v2_center).abs() <= tol
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corpus_round_trips(mut traces in prop::collection::vec(trace_strategy(), 1..6)) {
        for (k, t) in traces.iter_mut().enumerate() {
            t.id = format!("id-{k}");
        }
        let mut buf = Vec::new();
        write_corpus_to(&mut buf, &traces).unwrap();
        let loaded = read_corpus(buf.as_slice(), SchemaMode::Strict).unwrap();
        prop_assert_eq!(loaded.traces, traces);
    }

    #[test]
    fn lenient_load_accounts_for_every_line(good in prop::collection::vec(trace_strategy(), 0..5), bad in 0usize..5) {
        let mut text = String::new();
        for (k, t) in good.iter().enumerate() {
            let mut t = t.clone();
            t.id = format!("g{k}");
            text.push_str(&serde_json::to_string(&t).unwrap());
            text.push('\n');
        }
        for k in 0..bad {
            text.push_str(if k % 2 == 0 { "{not json\n" } else { "{\"id\": \"x\", \"question\": \"q\", \"steps\": []}\n" });
        }
        let loaded = read_corpus(text.as_bytes(), SchemaMode::Lenient).unwrap();
        prop_assert_eq!(loaded.traces.len() + loaded.skipped.len(), loaded.lines);
        prop_assert_eq!(loaded.lines, good.len() + bad);
    }

    #[test]
    fn normalization_preserves_order_and_effort_sign(series in uncertainty_series()) {
        let mut trajs = trajectories(&series);
        let stats = fit_normalization(&trajs).unwrap();
        for t in &mut trajs {
            apply_normalization(t, &stats);
        }
        let points: Vec<_> = trajs.iter().flat_map(|t| &t.points).collect();
        let zero = stats.scale_e(0.0);
        for a in &points {
            if a.e_raw.abs() > 1e-12 {
                prop_assert_eq!(a.e_raw > 0.0, a.e > zero);
            }
            for b in &points {
                if a.u_raw < b.u_raw {
                    prop_assert!(a.u <= b.u);
                }
            }
        }
    }

    #[test]
    fn divergence_is_linear(
        c in prop::collection::vec(-2.0f64..2.0, 8),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let g = Grid::default();
        let f = |u: f64, e: f64| (c[0] * u * u + c[1] * e, c[2] * u * e + c[3]);
        let h = |u: f64, e: f64| (c[4] * (3.0 * e).sin(), c[5] * u + c[6] * e * e + c[7]);
        let df = discrete_divergence(&FlowField::from_fn(g, f)).unwrap();
        let dh = discrete_divergence(&FlowField::from_fn(g, h)).unwrap();
        let mix = FlowField::from_fn(g, |u, e| {
            let (x, y) = (f(u, e), h(u, e));
            (a * x.0 + b * y.0, a * x.1 + b * y.1)
        });
        let dm = discrete_divergence(&mix).unwrap();
        for k in 0..g.len() {
            match (dm.values[k], df.values[k], dh.values[k]) {
                (Some(m), Some(x), Some(y)) => prop_assert!((m - (a * x + b * y)).abs() < 1e-9),
                (None, None, None) => {}
                other => prop_assert!(false, "definedness differs: {other:?}"),
            }
        }
    }

    #[test]
    fn field_is_permutation_invariant_and_mergeable(samples in samples_strategy(), split in 0usize..200) {
        let g = Grid::default();
        let opts = FieldOptions::default();
        let pooled = accumulate_field(&samples, g, opts).unwrap();
        let mut reversed = samples.clone();
        reversed.reverse();
        prop_assert!(fields_close(&pooled, &accumulate_field(&reversed, g, opts).unwrap(), 1e-9));

        let cut = split.min(samples.len());
        let mut left = FieldAccumulator::new(g);
        left.add_samples(&samples[..cut]);
        let mut right = FieldAccumulator::new(g);
        right.add_samples(&samples[cut..]);
        left.merge(&right).unwrap();
        prop_assert!(fields_close(&pooled, &left.finish(opts).unwrap(), 1e-9));

        let mass: f64 = pooled.cells.iter().filter(|c| c.count > 0).map(|c| c.density).sum();
        prop_assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn leapfrog_conserves_harmonic_energy(u0 in -1.0f64..1.0, e0 in -1.0f64..1.0) {
        prop_assume!(u0.hypot(e0) > 1e-3);
        let h = |(u, e): (f64, f64)| 0.5 * (u * u + e * e);
        let h0 = h((u0, e0));
        for s in leapfrog(|u| u, (u0, e0), 1e-3, 1000).unwrap() {
            prop_assert!((h(s) - h0).abs() / h0 < 1e-4);
        }
    }

    #[test]
    fn stage_ignores_positive_rescaling(
        v in (-1.0f64..1.0, -1.0f64..1.0),
        r in (-1.0f64..1.0, -1.0f64..1.0),
        p in -20i32..20,
        q in -20i32..20,
        theta in 0.0f64..0.99,
    ) {
        prop_assume!(v.0.hypot(v.1) > 1e-6 && r.0.hypot(r.1) > 1e-6);
        let (s, t) = (2f64.powi(p), 2f64.powi(q));
        let base = stage_for_cosine(cosine(v, r).unwrap(), theta);
        let scaled = stage_for_cosine(cosine((s * v.0, s * v.1), (t * r.0, t * r.1)).unwrap(), theta);
        prop_assert_eq!(base, scaled);
        prop_assert_eq!(stage_for_cosine(theta, theta), Stage::MetacognitionConflict);
        prop_assert_eq!(stage_for_cosine(-theta, theta), Stage::MetacognitionConflict);
    }

    #[test]
    fn welch_is_symmetric(
        a in prop::collection::vec(-5.0f64..5.0, 2..20),
        b in prop::collection::vec(-5.0f64..5.0, 2..20),
    ) {
        let (Ok(ab), Ok(ba)) = (welch_test(&a, &b), welch_test(&b, &a)) else { return Ok(()) };
        prop_assert_eq!(ab.statistic, -ba.statistic);
        prop_assert_eq!(ab.p, ba.p);
        prop_assert!((0.0..=1.0).contains(&ab.p));
    }

    #[test]
    fn occupancy_of_a_partition_sums_to_one(series in uncertainty_series(), cut in 0.0f64..0.4) {
        let trajs = trajectories(&series);
        let inside = region_occupancy(&trajs, |p| p.u < cut).unwrap();
        let outside = region_occupancy(&trajs, |p| p.u >= cut).unwrap();
        prop_assert!((inside.fraction + outside.fraction - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_band_contains_the_mean(series in uncertainty_series(), seed in any::<u64>()) {
        let mut trajs = trajectories(&series);
        let stats = fit_normalization(&trajs).unwrap();
        for t in &mut trajs {
            apply_normalization(t, &stats);
        }
        let m = mean_trajectory(&trajs, 11, 50, seed).unwrap();
        prop_assert_eq!(m.tau.first().copied(), Some(0.0));
        prop_assert_eq!(m.tau.last().copied(), Some(1.0));
        for k in 0..m.tau.len() {
            prop_assert!(m.u_lo[k] <= m.u_mean[k] && m.u_mean[k] <= m.u_hi[k]);
            prop_assert!(m.e_lo[k] <= m.e_mean[k] && m.e_mean[k] <= m.e_hi[k]);
        }
    }

    #[test]
    fn kde_of_a_union_is_the_weighted_mixture(
        a in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..20),
        b in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..20),
    ) {
        let spec = LandscapeSpec { nx: 12, ny: 10, bounds: Some([-3.0, 3.0, -3.0, 3.0]), padding: 0.0 };
        let bw = Bandwidth::Fixed(0.4);
        let pa: Vec<[f64; 2]> = a.iter().map(|&(x, y)| [x, y]).collect();
        let pb: Vec<[f64; 2]> = b.iter().map(|&(x, y)| [x, y]).collect();
        let union: Vec<[f64; 2]> = pa.iter().chain(&pb).copied().collect();
        let (da, db, du) = (
            kde_landscape(&pa, bw, spec).unwrap(),
            kde_landscape(&pb, bw, spec).unwrap(),
            kde_landscape(&union, bw, spec).unwrap(),
        );
        let (na, nb) = (pa.len() as f64, pb.len() as f64);
        for k in 0..du.density.len() {
            let mix = (na * da.density[k] + nb * db.density[k]) / (na + nb);
            prop_assert!((du.density[k] - mix).abs() <= 1e-12 * mix.abs().max(1e-12));
            prop_assert!(du.density[k] >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn synthetic_corpus_is_valid_deterministic_and_invertible(seed in any::<u64>()) {
        let spec = SynthSpec { n_traces: 40, seed, ..Default::default() };
        let corpus = generate(&spec).unwrap();
        prop_assert_eq!(&generate(&spec).unwrap(), &corpus);
        for (t, truth) in corpus.traces.iter().zip(&corpus.truth) {
            prop_assert!(validate_trace(t).is_empty(), "{:?}", validate_trace(t));
            let traj = build_trajectory(t, EntropyMode::Realized).unwrap();
            prop_assert_eq!(traj.points.len(), truth.u.len());
            for (p, &u) in traj.points.iter().zip(&truth.u) {
                prop_assert!((p.u_raw - u).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn choice_sets_never_mix_questions(seed in any::<u64>(), k in 2usize..6) {
        let corpus = generate(&SynthSpec { n_traces: 40, seed, ..Default::default() }).unwrap();
        let question: BTreeMap<&str, &str> =
            corpus.traces.iter().map(|t| (t.id.as_str(), t.question.as_str())).collect();
        let report = pseudo_mcq(&corpus.traces, k, seed).unwrap();
        for set in &report.sets {
            prop_assert!(set.trace_ids.iter().all(|id| question[id.as_str()] == set.question));
            prop_assert_eq!(set.trace_ids.len(), set.answers.len());
        }
    }

    #[test]
    fn tsne_output_is_centered(pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 12..24), seed in any::<u64>()) {
        let cfg = TsneConfig { perplexity: 3.0, iterations: 60, exaggeration_iters: 20, momentum_switch: 20, seed, ..Default::default() };
        let r = tsne(&pts, &cfg).unwrap();
        let n = r.coords.len() as f64;
        let mx = r.coords.iter().map(|c| c[0]).sum::<f64>() / n;
        let my = r.coords.iter().map(|c| c[1]).sum::<f64>() / n;
        prop_assert!(mx.abs() < 1e-9 && my.abs() < 1e-9, "{mx} {my}");
    }
}
