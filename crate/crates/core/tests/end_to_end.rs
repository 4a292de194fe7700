use sgrisk_core::model::{Checkpoint, ModelConfig, TemporalMode};
use sgrisk_core::pipeline::{build_graph_records, cross_validate, load_graph_records, predict, prepare_records, TrainConfig};
use sgrisk_core::scenegen::{generate_dataset, write_dataset, ScenarioSpec};
use sgrisk_core::scenegraph::{read_clips, write_graph_records, GraphConfig, RiskLabel};
use sgrisk_core::RiskModel;

fn small_model() -> ModelConfig {
    ModelConfig {
        hidden: vec![12],
        lstm_hidden: 8,
        ..ModelConfig::default()
    }
}

#[test]
fn generate_build_train_restore() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ScenarioSpec { n_clips: 24, seed: 2, ..ScenarioSpec::default() };
    let (clips, manifest) = generate_dataset(&spec).unwrap();
    let clip_path = dir.path().join("clips.jsonl");
    write_dataset(&clip_path, &clips, &manifest).unwrap();
    assert_eq!(read_clips(&clip_path).unwrap(), clips);

    let graph_cfg = GraphConfig::default();
    let records = build_graph_records(&clips, &graph_cfg).unwrap();
    let graph_path = dir.path().join("graphs.jsonl");
    write_graph_records(&graph_path, &records).unwrap();
    assert_eq!(load_graph_records(&graph_path, &graph_cfg).unwrap(), records);
    assert_eq!(load_graph_records(&clip_path, &graph_cfg).unwrap(), records);

    let model_cfg = small_model();
    let data = prepare_records(&records, &model_cfg.vocab).unwrap();
    let train_cfg = TrainConfig { epochs: 3, n_splits: 2, ..TrainConfig::default() };
    let a = cross_validate(&model_cfg, &train_cfg, &data).unwrap();
    let b = cross_validate(&model_cfg, &train_cfg, &data).unwrap();
    assert_eq!(a.report.to_csv(), b.report.to_csv());
    assert_eq!(a.report.splits.len(), 2);

    let run = &a.runs[0];
    let ck_path = dir.path().join("model.json");
    Checkpoint::from_model(&run.outcome.model, run.outcome.meta.clone()).save(&ck_path).unwrap();
    let restored: RiskModel = Checkpoint::load(&ck_path).unwrap().to_model().unwrap();
    let before = predict(&run.outcome.model, &data, &run.split.test).unwrap();
    let after = predict(&restored, &data, &run.split.test).unwrap();
    for (x, y) in before.iter().zip(&after) {
        assert_eq!(x.probs, y.probs);
    }
}

#[test]
fn single_precision_tracks_double() {
    let spec = ScenarioSpec { n_clips: 4, seed: 9, ..ScenarioSpec::default() };
    let (clips, _) = generate_dataset(&spec).unwrap();
    let records = build_graph_records(&clips, &GraphConfig::default()).unwrap();
    for temporal in [TemporalMode::LstmAttn, TemporalMode::Mean] {
        let model: RiskModel = RiskModel::new(ModelConfig { temporal, ..small_model() }, 4).unwrap();
        let single = model.cast::<f32>();
        for r in &records {
            let clip = model.prepare(&r.clip_id, Some(r.label), &r.graphs).unwrap();
            let p64 = model.forward_clip(&clip).unwrap().probs;
            let p32 = single.forward_clip(&clip).unwrap().probs;
            assert!((p64[1] - p32[1] as f64).abs() < 1e-4, "{p64:?} vs {p32:?}");
        }
    }
    assert!(records.iter().any(|r| r.label == RiskLabel::Risky));
}
