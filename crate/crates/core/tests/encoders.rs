use infomax3d::autodiff::Mode;
use infomax3d::encoders::{
    build_encoder, build_probe, decode_checkpoint, encode_checkpoint, forward_with_taps, load_checkpoint,
    save_checkpoint, ArchitectureSpec, ClassifierHead, ForwardOptions, Layer, ParamStore, Preset, Tap,
};
use infomax3d::{Error, Tape32, Tape64, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(42)
}

#[test]
fn canonical_fc_inputs() {
    let alex = ArchitectureSpec::build(Preset::AlexNet, 128, 4).unwrap();
    assert_eq!(alex.fc_input(), Some(1024));
    let res = ArchitectureSpec::build(Preset::ResNet, 128, 4).unwrap();
    assert_eq!(res.fc_input(), Some(2048));
    assert!(res.layers.contains(&Layer::linear("fc1", 2048, 1024)));
    assert!(alex.layers.contains(&Layer::linear("fc1", 1024, 1024)));
}

#[test]
fn dim_alexnet_taps_at_128() {
    let mut enc = build_encoder::<f32, _>(Preset::DimAlexNet, 128, 4, &mut rng()).unwrap();
    let mut tape = Tape32::new();
    let x = tape.constant(Tensor::zeros(&[1, 1, 128, 128, 128]));
    let out = enc.forward(&mut tape, x, ForwardOptions::eval()).unwrap();
    assert_eq!(tape.shape(out.tap(Tap::Conv).unwrap()), &[1, 128, 2, 2, 2]);
    assert_eq!(tape.shape(out.tap(Tap::Fc).unwrap()), &[1, 1024]);
    assert_eq!(tape.shape(out.output), &[1, 64]);
    assert_eq!(tape.shape(out.tap(Tap::Local).unwrap()), &[1, 192, 6, 6, 6]);
    // zero input with zero biases maps to the zero representation
    assert!(tape.value(out.output).data().iter().all(|&v| v == 0.0));
}

#[test]
fn resnet_forward_at_128() {
    let mut enc = build_encoder::<f32, _>(Preset::ResNet, 128, 4, &mut rng()).unwrap();
    let mut tape = Tape32::new();
    let mut r = rng();
    let x = tape.constant(Tensor::randn(&[1, 1, 128, 128, 128], 1.0, &mut r));
    let out = enc.forward(&mut tape, x, ForwardOptions::eval()).unwrap();
    assert_eq!(tape.value(out.tap(Tap::Conv).unwrap()).numel(), 2048);
    assert_eq!(tape.shape(out.output), &[1, 4]);
}

#[test]
fn too_small_input_names_layer() {
    let err = ArchitectureSpec::build(Preset::AlexNet, 40, 4).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
    assert!(err.to_string().contains("layer"), "{err}");
}

#[test]
fn parameter_counts() {
    assert_eq!(Layer::linear("fc", 1024, 4).parameter_count(), 4100);
    assert_eq!(Layer::conv("c", 1, 64, 5, 2, 0).parameter_count(), 8064);
    let alex = ArchitectureSpec::build(Preset::AlexNet, 128, 4).unwrap();
    assert_eq!(alex.parameter_count(), 3_609_476);
    let enc = build_encoder::<f32, _>(Preset::AlexNet, 128, 4, &mut rng()).unwrap();
    assert_eq!(enc.params.numel(), alex.parameter_count());
}

#[test]
fn probe_widths() {
    let dim = ArchitectureSpec::build(Preset::DimAlexNet, 128, 4).unwrap();
    assert_eq!(build_probe(&dim, Tap::Z, 4).unwrap().input_dim, 64);
    assert_eq!(build_probe(&dim, Tap::Conv, 4).unwrap().input_dim, 1024);
    assert_eq!(build_probe(&dim, Tap::Fc, 4).unwrap().input_dim, 1024);
    assert!(build_probe(&dim, Tap::Local, 4).is_err());
    assert!("pixels".parse::<Tap>().is_err());
    let head = build_probe(&dim, Tap::Z, 4).unwrap();
    assert_eq!((head.hidden, head.dropout_p, head.num_classes), (200, 0.1, 4));
}

#[test]
fn eval_forward_is_pure() {
    let mut enc = build_encoder::<f64, _>(Preset::AlexNetMini, 32, 4, &mut rng()).unwrap();
    let mut r = rng();
    let x = Tensor::randn(&[2, 1, 32, 32, 32], 1.0, &mut r);
    let a = enc.features(&x, Tap::Fc).unwrap();
    let b = enc.features(&x, Tap::Fc).unwrap();
    assert_eq!(a, b);
}

#[test]
fn residual_block_with_zero_second_conv_passes_relu_of_input() {
    let spec = ArchitectureSpec::build(Preset::ResNetMini, 32, 4).unwrap();
    let mut store: ParamStore<f64> = infomax3d::encoders::init_params(&spec, &mut rng());
    let w = store.get_mut("layer1.0.conv2.weight").unwrap();
    *w = Tensor::zeros(w.shape());
    // single-block spec sharing the parameter names
    let block = ArchitectureSpec {
        preset: Preset::ResNetMini,
        input_side: 4,
        layers: vec![Layer::conv("conv1", 1, 8, 1, 1, 0), Layer::residual("layer1.0", 8, 8, 1)],
    };
    let mut tape = Tape64::new();
    let mut r = rng();
    let x = Tensor::randn(&[2, 1, 4, 4, 4], 1.0, &mut r);
    let xv = tape.constant(x);
    let out = forward_with_taps(&block, &mut store, &mut tape, xv, ForwardOptions::eval()).unwrap();
    // conv2 = 0 and bn2 (eval, identity stats, zero beta) = 0 ⇒ relu(0 + shortcut)
    let mut t2 = Tape64::new();
    let xv2 = t2.constant(tape.value(xv).clone());
    let w1 = store.bind(&mut t2, "conv1.weight", true).unwrap();
    let b1 = store.bind(&mut t2, "conv1.bias", true).unwrap();
    let c = t2.conv3d(xv2, w1, b1, 1, 0).unwrap();
    let expected = t2.value(c).map(|v| v.max(0.0));
    for (a, b) in tape.value(out.output).data().iter().zip(expected.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn frozen_encoder_gets_no_gradient() {
    let mut enc = build_encoder::<f64, _>(Preset::DimAlexNetMini, 32, 4, &mut rng()).unwrap();
    let head = ClassifierHead::new("probe", 32, 4);
    let mut hp: ParamStore<f64> = head.init_params(&mut rng());
    let mut tape = Tape64::new();
    let mut r = rng();
    let x = tape.constant(Tensor::randn(&[3, 1, 32, 32, 32], 1.0, &mut r));
    let out = enc.forward(&mut tape, x, ForwardOptions::eval()).unwrap();
    let logits = head.forward(&mut tape, &mut hp, out.output, Mode::Train, &mut r).unwrap();
    let loss = tape.cross_entropy(logits, &[0, 1, 2]).unwrap();
    let g = tape.backward(loss).unwrap();
    for (name, t) in enc.params.iter() {
        let grad = g.param(name, &tape).unwrap();
        assert_eq!(grad, Tensor::zeros(t.shape()), "{name}");
    }
    assert!(g.param("probe.fc1.weight", &tape).unwrap().sq_norm() > 0.0);
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let enc = build_encoder::<f32, _>(Preset::ResNetMini, 32, 4, &mut rng()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &enc.params).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], b"IMVCKPT1");
    let mut other = build_encoder::<f32, _>(Preset::ResNetMini, 32, 4, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    load_checkpoint(&path, &mut other.params).unwrap();
    assert_eq!(encode_checkpoint(&other.params), bytes);
    assert!(decode_checkpoint::<f64>(&bytes).is_err());
    assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 3]).is_err());
}
