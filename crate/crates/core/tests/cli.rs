use std::path::Path;
use std::process::{Command, Output};

use stemlink::pipeline::PipelineConfig;

const TINY: &str = r#"{
  "dataset": {"kind": "synth", "name": "tiny", "k_true": 4, "n_tracks": 6, "track_secs": 16.0, "noise": 0.01},
  "alphabet": [8],
  "model": {"n_layers": 1, "d_model": 16, "n_heads": 2, "d_ff": 32},
  "train": {"max_epochs": 2}
}"#;

fn stemlink(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stemlink"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "expected one stderr line, got {text:?}");
    lines[0].to_string()
}

fn with_config(dir: &Path) -> String {
    let path = dir.join("tiny.json");
    std::fs::write(&path, TINY).unwrap();
    path.display().to_string()
}

#[test]
fn evaluate_without_model_names_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(dir.path());
    assert!(stemlink(dir.path(), &["--config", &cfg, "prepare"])
        .status
        .success());
    let out = stemlink(dir.path(), &["--config", &cfg, "evaluate"]);
    assert!(!out.status.success());
    let line = stderr_line(&out);
    assert!(line.starts_with("error: "), "{line}");
    assert!(line.contains("model.stlm"), "{line}");
    assert!(line.contains("train-decision"), "{line}");
}

#[test]
fn unreadable_config_is_one_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = stemlink(dir.path(), &["--config", "absent.json", "prepare"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).contains("absent.json"));

    std::fs::write(dir.path().join("bad.json"), "{\"top_p\": 1.5}").unwrap();
    let out = stemlink(dir.path(), &["--config", "bad.json", "prepare"]);
    assert!(!out.status.success());
    assert!(stderr_line(&out).contains("top_p"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(dir.path());
    let out = stemlink(dir.path(), &["--config", &cfg, "--top-p", "0", "prepare"]);
    assert!(!out.status.success());
    assert!(stderr_line(&out).contains("top_p 0"));
}

#[test]
fn prepare_writes_dataset_tree_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(dir.path());
    let out = stemlink(dir.path(), &["--config", &cfg, "--out", "runs", "prepare"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let root = dir.path().join("runs/tiny");
    assert!(root.join("manifest.json").is_file());
    assert!(root.join("provenance.json").is_file());
    for t in 0..6 {
        for stem in ["A.wav", "B.wav"] {
            assert!(root.join(format!("data/track_{t:03}/{stem}")).is_file());
        }
    }
}

#[test]
fn full_grid_names_each_segment_and_alphabet() {
    let cfg = PipelineConfig {
        segment_ms: vec![250, 350, 500],
        alphabet: vec![16, 64, 256],
        ..PipelineConfig::default()
    };
    let names: Vec<String> = cfg
        .grid()
        .iter()
        .map(|gp| {
            cfg.config_dir(*gp)
                .file_name()
                .unwrap()
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    let mut expected = Vec::new();
    for seg in ["0.25", "0.35", "0.5"] {
        for k in [16, 64, 256] {
            expected.push(format!("{seg}s_A{k}"));
        }
    }
    assert_eq!(names, expected);
}

#[test]
fn chain_then_render_writes_audio_and_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(dir.path());
    for stage in ["prepare", "train-vq", "encode", "train-decision"] {
        let out = stemlink(dir.path(), &["--config", &cfg, stage]);
        assert!(
            out.status.success(),
            "{stage}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = stemlink(dir.path(), &["--config", &cfg, "--constrained", "render"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let wav = String::from_utf8(out.stdout).unwrap();
    let wav = Path::new(wav.trim());
    let rendered = stemlink::audio::load_wav(dir.path().join(wav)).unwrap();
    assert!(!rendered.is_empty());
    let cfg_dir = dir.path().join("out/tiny/0.25s_A8");
    let corpus = stemlink::action::Corpus::load(cfg_dir.join("corpus.json")).unwrap();
    assert_eq!(corpus.k, 8);
    let n = corpus.entries.len();
    let fade = 16_000 * 10 / 1000;
    assert_eq!(rendered.len(), n * corpus.segment_len() - (n - 1) * fade);
}
