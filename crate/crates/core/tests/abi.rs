//! On-disk interface: corpus, config, selection, checkpoint and report files.

use std::fs;

use cmsst_core::cmsn::{Checkpoint, CmsnModel, TrainConfig};
use cmsst_core::corpus::{generate_synthetic_corpus, read_selection, Corpus, SyntheticSpec};
use cmsst_core::mcss::McssConfig;
use cmsst_core::pipeline::{run_pipeline, Paths, PipelineConfig, PipelineReport};

fn setup(dir: &std::path::Path) -> PipelineConfig {
    let s = generate_synthetic_corpus(&SyntheticSpec {
        target_sizes: vec![20, 20],
        other_sizes: vec![20],
        mismatch_fraction: 0.2,
        seed: 4,
        ..SyntheticSpec::default()
    })
    .unwrap();
    s.corpus.write(dir.join("corpus.jsonl")).unwrap();
    s.target.unwrap().write(dir.join("target.jsonl")).unwrap();
    PipelineConfig {
        paths: Paths {
            corpus: Some(dir.join("corpus.jsonl")),
            target: Some(dir.join("target.jsonl")),
            selection: None,
            out_dir: Some(dir.join("out")),
        },
        mcss: McssConfig {
            k_text: 4,
            k_speech: 4,
            r: 2,
            n: 20,
            ..McssConfig::default()
        },
        train: TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        },
        random_baseline_seeds: 2,
        ..PipelineConfig::default()
    }
}

#[test]
fn corpus_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let text = fs::read_to_string(dir.path().join("corpus.jsonl")).unwrap();
    let c = Corpus::load(dir.path().join("corpus.jsonl")).unwrap();
    assert_eq!(c.to_jsonl(), text);
    assert_eq!(c.len(), 60);
}

#[test]
fn pipeline_artifacts_reload() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    fs::write(dir.path().join("p.json"), cfg.to_json_string()).unwrap();
    let cfg = PipelineConfig::load(dir.path().join("p.json")).unwrap();
    let report = run_pipeline(&cfg).unwrap();
    let out = dir.path().join("out");

    let ids = read_selection(out.join("selection.txt")).unwrap();
    assert_eq!(ids, report.selection.selected_ids);
    assert_eq!(ids.len(), 20);

    let ck = Checkpoint::load(out.join("checkpoint.json")).unwrap();
    let model = CmsnModel::from_checkpoint(&ck).unwrap();
    let selected = Corpus::load(dir.path().join("corpus.jsonl")).unwrap().select_ids(&ids).unwrap();
    let rho = model.selective_scores(&selected).unwrap();
    assert!(rho.iter().all(|r| *r > 0.0 && *r < 1.0));

    let saved: PipelineReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(saved.without_timings(), report.without_timings());
    assert!(!out.join("PARTIAL").exists());
}
