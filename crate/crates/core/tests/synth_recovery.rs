use iftrack_core::analysis::{classify_traces, ClassifierConfig};
use iftrack_core::flow::{FieldOptions, Grid};
use iftrack_core::infodyn::{track_corpus, EntropyMode};
use iftrack_core::synth::{generate, SynthSpec};

#[test]
fn classifier_recovers_planted_stages() {
    let corpus = generate(&SynthSpec::default()).unwrap();
    let (trajs, _) = track_corpus(&corpus.traces, EntropyMode::Realized).unwrap();
    let (_, out) = classify_traces(
        &corpus.traces,
        &trajs,
        Grid::default(),
        FieldOptions::default(),
        &ClassifierConfig::default(),
    )
    .unwrap();
    let planted = corpus.truth.iter().filter(|g| g.planted_stage.is_some()).count();
    let agree = out.steps.iter().filter(|s| Some(s.label.stage) == s.annotated).count();
    println!(
        "planted {planted} classified {} agree {agree} skipped {:?} unplanted {}",
        out.steps.len(),
        out.skipped,
        corpus.unplanted.len()
    );
    assert_eq!(out.steps.len(), planted);
    assert!(agree as f64 >= 0.95 * planted as f64, "{agree}/{planted}");
}
