use infomax3d::data::{batch_iter, generate_synthetic, AugmentationConfig, Dataset, SyntheticConfig, VolumeRecord};
use infomax3d::dim::{Estimator, StatisticsNetworks};
use infomax3d::encoders::{build_encoder, ClassifierHead, ParamStore, Preset, Tap};
use infomax3d::trainer::{
    amsgrad_update, encoder_outputs, pretrain_dim, probe_logits, read_metrics, select_checkpoint, train_head,
    train_probe, train_supervised, Checkpoint, EpochMetrics, JsonlSink, Moments, NullSink, TrainConfig,
};
use infomax3d::{Error, Tape64, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn cp(epoch: usize, train: f64, val: f64) -> Checkpoint {
    Checkpoint {
        epoch,
        train_metric: train,
        val_metric: val,
    }
}

fn bits(p: &ParamStore<f64>) -> Vec<(String, Vec<u64>)> {
    p.iter().map(|(n, t)| (n.to_string(), t.data().iter().map(|x| x.to_bits()).collect())).collect()
}

fn synthetic(per_class: usize, side: usize, seed: u64) -> Dataset<f64> {
    let vols = generate_synthetic(&SyntheticConfig::new([per_class; 4], side, seed)).unwrap();
    Dataset::new(vols, AugmentationConfig::disabled(side)).unwrap()
}

fn quick(epochs: usize, batch: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: batch,
        burn_in_epochs: 0,
        ..TrainConfig::supervised()
    }
}

#[test]
fn checkpoint_selection() {
    let h = [cp(1, 0.5, 0.4), cp(2, 0.6, 0.7), cp(3, 0.8, 0.75), cp(4, 0.9, 0.75)];
    let s = select_checkpoint(&h, 0).unwrap();
    assert_eq!((s.checkpoint.epoch, s.fallback), (3, false));
    let s = select_checkpoint(&h, 3).unwrap();
    assert_eq!(s.checkpoint.epoch, 4);
    let s = select_checkpoint(&[cp(1, 0.5, 0.6), cp(2, 0.5, 0.7)], 0).unwrap();
    assert_eq!((s.checkpoint.epoch, s.fallback), (2, true));
    assert!(select_checkpoint(&[], 0).is_err());
}

fn separable(n_per_class: usize, seed: u64) -> (Tensor<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for i in 0..4 * n_per_class {
        let k = i % 4;
        for f in 0..6 {
            x.push(if f == k { 3.0 } else { 0.0 } + noise.sample(&mut rng));
        }
        y.push(k);
    }
    (Tensor::new(&[y.len(), 6], x).unwrap(), y)
}

#[test]
fn head_learns_separable_features() {
    let (tx, ty) = separable(10, 0);
    let (vx, vy) = separable(5, 1);
    let head = ClassifierHead::new("probe", 6, 4);
    let out = train_head(&head, &tx, &ty, &vx, &vy, &quick(60, 8), &mut NullSink).unwrap();
    let best = out.training.selection.unwrap().checkpoint;
    assert_eq!(best.val_metric, 1.0);
    assert_eq!(out.training.history.len(), 60);
}

#[test]
fn zero_epochs_keep_initial_parameters() {
    let (tx, ty) = separable(3, 0);
    let head = ClassifierHead::new("probe", 6, 4);
    let out = train_head(&head, &tx, &ty, &tx, &ty, &quick(0, 4), &mut NullSink).unwrap();
    assert!(out.training.history.is_empty() && out.training.selection.is_none());
    assert_eq!(bits(&out.training.selected), bits(&out.final_params));

    let data = synthetic(2, 32, 0);
    let mut enc = build_encoder::<f64, _>(Preset::AlexNetMini, 32, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let before = bits(&enc.params);
    let idx: Vec<usize> = (0..8).collect();
    let mut log = Vec::new();
    let out = train_supervised(&mut enc, &data, &idx, &idx, &quick(0, 4), &mut log).unwrap();
    assert!(log.is_empty() && out.history.is_empty());
    assert_eq!(bits(&out.selected), before);
}

#[test]
fn l1_increases_sparsity() {
    let (tx, ty) = separable(10, 2);
    let head = ClassifierHead::new("probe", 6, 4);
    let frac = |lambda: f64| {
        let cfg = TrainConfig {
            lambda_l1: lambda,
            learning_rate: 1e-2,
            ..quick(100, 8)
        };
        train_head(&head, &tx, &ty, &tx, &ty, &cfg, &mut NullSink).unwrap().final_params.fraction_below(1e-4)
    };
    assert!(frac(1.0) > frac(0.0));
}

#[test]
fn probe_leaves_encoder_untouched() {
    let data = synthetic(3, 32, 1);
    let mut enc = build_encoder::<f64, _>(Preset::DimAlexNetMini, 32, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let before = bits(&enc.params);
    let idx: Vec<usize> = (0..12).collect();
    let out = train_probe(&mut enc, Tap::Z, 4, &data, &idx, &idx, &quick(5, 4), &mut NullSink).unwrap();
    assert_eq!(bits(&enc.params), before);
    assert_eq!(out.head.input_dim, 32);
    assert_eq!(out.final_params.get("probe.fc1.weight").unwrap().shape()[1], 32);
}

#[test]
fn supervised_logs_two_lines_per_epoch() {
    let data = synthetic(3, 32, 2);
    let mut enc = build_encoder::<f64, _>(Preset::AlexNetMini, 32, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let idx: Vec<usize> = (0..12).collect();
    let mut log: Vec<EpochMetrics> = Vec::new();
    train_supervised(&mut enc, &data, &idx[..8], &idx[8..], &quick(3, 4), &mut log).unwrap();
    let splits: Vec<(usize, &str)> = log.iter().map(|m| (m.epoch, m.split.as_str())).collect();
    assert_eq!(splits, vec![(1, "train"), (1, "val"), (2, "train"), (2, "val"), (3, "train"), (3, "val")]);
    assert!(log.iter().all(|m| m.balanced_accuracy.is_some()));
}

#[test]
fn self_supervised_head_fits_a_single_class() {
    let mut vols = generate_synthetic(&SyntheticConfig::new([8, 0, 0, 0], 32, 4)).unwrap();
    for v in &mut vols {
        v.label = 0;
    }
    let data: Dataset<f64> = Dataset::new(vols, AugmentationConfig::disabled(32)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut enc = build_encoder::<f64, _>(Preset::DimAlexNetMini, 32, 4, &mut rng).unwrap();
    let mut nets = StatisticsNetworks::new(24, 32, 64, &mut rng);
    let cfg = TrainConfig {
        ss_weight: 1.0,
        learning_rate: 1e-3,
        ..quick(15, 4)
    };
    let idx: Vec<usize> = (0..8).collect();
    let out = pretrain_dim(&mut enc, &mut nets, &data, &idx, &cfg, Estimator::Jsd, Some(4), &mut NullSink).unwrap();
    let (head, params) = out.z_head.unwrap();
    let z = encoder_outputs(&mut enc, &data, &idx).unwrap();
    let logits = probe_logits(&head, &params, &z).unwrap();
    let mut t = Tape64::new();
    let l = t.constant(logits);
    let ce = t.cross_entropy(l, &[0; 8]).unwrap();
    let ce = t.value(ce).item().unwrap();
    assert!(ce < 0.2, "cross-entropy {ce}");
}

#[test]
fn nce_stays_bounded_and_jsd_improves() {
    let data = synthetic(4, 32, 6);
    let idx: Vec<usize> = (0..16).collect();
    for est in [Estimator::Nce, Estimator::Jsd] {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut enc = build_encoder::<f64, _>(Preset::DimAlexNetMini, 32, 4, &mut rng).unwrap();
        let mut nets = StatisticsNetworks::new(24, 32, 64, &mut rng);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            ..quick(8, 8)
        };
        let out = pretrain_dim(&mut enc, &mut nets, &data, &idx, &cfg, est, None, &mut NullSink).unwrap();
        assert_eq!(out.step_objectives.len(), 16);
        match est {
            Estimator::Nce => assert!(out.step_objectives.iter().all(|&o| o + 8f64.ln() <= 8f64.ln() + 1e-6)),
            _ => assert!(out.epoch_objectives.last() > out.epoch_objectives.first(), "{:?}", out.epoch_objectives),
        }
        assert!(out.best_epoch.is_some());
    }
}

#[test]
fn huge_inputs_diverge_with_epoch() {
    let vols: Vec<VolumeRecord> = (0..4)
        .map(|i| VolumeRecord::new(format!("v{i}"), i % 2, [32, 32, 32], vec![3e38 * (i as f32 - 1.5); 32 * 32 * 32]).unwrap())
        .collect();
    let data: Dataset<f32> = Dataset::new(vols, AugmentationConfig::disabled(32)).unwrap();
    let mut enc = build_encoder::<f32, _>(Preset::AlexNetMini, 32, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let err = train_supervised(&mut enc, &data, &[0, 1, 2, 3], &[0, 1], &quick(2, 4), &mut NullSink).unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 1 }), "{err}");
}

#[test]
fn batch_counts() {
    let idx: Vec<usize> = (0..10).collect();
    assert_eq!(batch_iter(&idx, 4, true, 0, 1).len(), 2);
    let b = batch_iter(&idx, 4, false, 0, 1);
    assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
    assert_ne!(batch_iter(&idx, 10, false, 0, 1), batch_iter(&idx, 10, false, 0, 2));
}

#[test]
fn amsgrad_first_steps() {
    let mut p = [1.0f64, -2.0];
    let mut state = Moments::new(2);
    amsgrad_update(&mut p, &[0.5, -4.0], &mut state, 1, 0.1).unwrap();
    // first step moves each coordinate by about lr against its gradient sign
    assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 1.9).abs() < 1e-6, "{p:?}");
    let v_max = state.v_max.clone();
    amsgrad_update(&mut p, &[0.0, 0.0], &mut state, 2, 0.1).unwrap();
    assert_eq!(state.v_max, v_max);
    assert!(p[0] < 0.9 && p[1] > -1.9);
    assert!(amsgrad_update(&mut p, &[0.0], &mut state, 3, 0.1).is_err());
}

#[test]
fn canonical_metrics_are_rerun_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(2, 32, 8);
    let idx: Vec<usize> = (0..8).collect();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let mut sink = JsonlSink::create(&path, true).unwrap();
        let mut enc = build_encoder::<f64, _>(Preset::AlexNetMini, 32, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        train_supervised(&mut enc, &data, &idx, &idx, &quick(2, 4), &mut sink).unwrap();
        drop(sink);
        assert_eq!(read_metrics(&path).unwrap().len(), 4);
        std::fs::read(path).unwrap()
    };
    assert_eq!(run("a.jsonl"), run("b.jsonl"));
}
