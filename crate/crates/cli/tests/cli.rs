use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use iftrack_cli::render::Palette;
use iftrack_cli::Manifest;
use proptest::prelude::*;

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic")
}

fn iftrack(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iftrack"))
        .args(args)
        .arg("--output")
        .arg(out)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn flow_without_track_names_the_missing_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = corpus_dir().join("config.json");
    let o = iftrack(&["flow", "--config", cfg.to_str().unwrap()], tmp.path());
    assert!(!o.status.success());
    let msg = stderr(&o);
    assert!(msg.contains("missing trajectories.csv"), "{msg}");
    assert!(msg.contains("iftrack track"), "{msg}");
}

#[test]
fn stages_chain_and_repeat_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = corpus_dir().join("config.json");
    let cfg = cfg.to_str().unwrap();
    let mut manifests = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        for stage in ["ingest", "score", "track", "flow", "hamiltonian"] {
            let o = iftrack(&[stage, "--config", cfg], &out);
            assert!(o.status.success(), "{stage}: {}", stderr(&o));
        }
        manifests.push(Manifest::read(&out.join("flow/manifest.json")).unwrap());
        for f in [
            "track/trajectories.csv",
            "flow/flowfield.csv",
            "flow/divergence.csv",
            "hamiltonian/potential.csv",
        ] {
            assert!(out.join(f).is_file(), "{f}");
        }
    }
    assert_eq!(manifests[0], manifests[1]);
    assert!(manifests[0].outputs.contains_key("flow/flowfield.csv"));
}

#[test]
fn unknown_config_field_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"grid": [20, 20], "gird": 3}"#).unwrap();
    let o = iftrack(&["ingest", "--config", cfg.to_str().unwrap()], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn grid_override_reaches_the_flow_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = corpus_dir().join("config.json");
    let cfg = cfg.to_str().unwrap();
    let out = tmp.path().join("o");
    for stage in ["ingest", "score", "track", "flow"] {
        let o = iftrack(&[stage, "--config", cfg, "--grid-nx", "10", "--grid-ny", "8"], &out);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let rows = std::fs::read_to_string(out.join("flow/flowfield.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 1 + 10 * 8);
}

proptest! {
    #[test]
    fn palette_colors_are_hex(t in -1.0f64..2.0) {
        for p in [Palette::Rdbu, Palette::Puor, Palette::Viridis, Palette::Greys] {
            let c = p.color(t);
            prop_assert_eq!(c.len(), 7);
            prop_assert!(c.starts_with('#') && c[1..].chars().all(|ch| ch.is_ascii_hexdigit()));
        }
    }
}
