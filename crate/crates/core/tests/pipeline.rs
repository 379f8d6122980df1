use std::io::BufReader;

use cascade_core::dataset::{read_jsonl, write_jsonl};
use cascade_core::features::{extract_all, fit_ridge, predict_ridge, IdentityBlock};
use cascade_core::generate::{downsample_zero_growth, generate_global, make_dataset, split_dataset, SyntheticConfig};
use cascade_core::graph::parse_global_graph;
use cascade_core::model::{Checkpoint, CheckpointConfig, ModelConfig, ModelParams, CHECKPOINT_FORMAT_VERSION};
use cascade_core::train::{evaluate, prepare, train, TrainConfig, TrainData};
use cascade_core::walk::WalkConfig;

fn small() -> SyntheticConfig {
    SyntheticConfig { n_nodes: 300, n_cascades: 80, seed: 3, ..SyntheticConfig::default() }
}

#[test]
fn graph_and_records_survive_serialization() {
    let sc = small();
    let g = generate_global(&sc).unwrap();
    let mut tsv = Vec::new();
    g.write_tsv(&mut tsv).unwrap();
    let back = parse_global_graph(BufReader::new(&tsv[..])).unwrap();
    assert_eq!(back.n_nodes(), g.n_nodes());
    assert!(back.edges().eq(g.edges()));

    let records = make_dataset(&g, &sc).unwrap();
    let mut buf = Vec::new();
    write_jsonl(&records, &mut buf).unwrap();
    assert_eq!(read_jsonl(BufReader::new(&buf[..])).unwrap(), records);
}

#[test]
fn generation_is_reproducible() {
    let sc = small();
    let a = make_dataset(&generate_global(&sc).unwrap(), &sc).unwrap();
    let b = make_dataset(&generate_global(&sc).unwrap(), &sc).unwrap();
    assert_eq!(a, b);
    let other = SyntheticConfig { seed: 4, ..sc };
    assert_ne!(a, make_dataset(&generate_global(&other).unwrap(), &other).unwrap());
}

#[test]
fn train_checkpoint_and_baseline_end_to_end() {
    let sc = small();
    let g = generate_global(&sc).unwrap();
    let records = make_dataset(&g, &sc).unwrap();
    let (tr, va, te) = split_dataset(records, (0.7, 0.15, 0.15), 1).unwrap();
    let h = sc.primary_horizon();
    let tr = downsample_zero_growth(tr, h, 0.5, 2).unwrap();

    let model = ModelConfig { hidden: 6, k: 20, t: 5, n_nodes: g.n_nodes(), seed: 5, ..ModelConfig::default() };
    let walk = WalkConfig { k: 20, t: 5, seed: 6, ..WalkConfig::default() };
    let ex: Vec<_> = [&tr, &va, &te].iter().map(|s| prepare(s, &g, &model, &walk, h).unwrap()).collect();
    let tc = TrainConfig { epochs_max: 4, seed: 7, ..TrainConfig::default() };
    let data = TrainData { graph: &g, walk: &walk, train: &ex[0], val: &ex[1], test: &ex[2] };
    let (params, report) = train(&model, ModelParams::init(&model).unwrap(), &data, &tc).unwrap();
    assert!(report.best_val_mse.is_finite());
    assert!(report.best_val_mse <= report.initial_val_mse);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let ck = Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: CheckpointConfig { model: model.clone(), walk: walk.clone(), horizon: h },
        params: params.clone(),
    };
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let before = evaluate(&params, &model, &ex[2]).unwrap().mse;
    let after = evaluate(&loaded.params, &loaded.config.model, &ex[2]).unwrap().mse;
    assert_eq!(before.to_bits(), after.to_bits());
    assert_eq!(Some(before), report.test_mse);

    let x = extract_all(&tr, &g, IdentityBlock::None).unwrap();
    let y: Vec<f64> = tr.iter().map(|r| r.label(h).unwrap()).collect();
    let m = fit_ridge(&x, &y, 0.1).unwrap();
    assert!(x.iter().all(|f| predict_ridge(&m, f).unwrap().is_finite()));
}
