use infomax3d::dim::{compute_scores, l1_penalty, local_dim_loss, Estimator, StatisticsNetworks, EMBED_DIM};
use infomax3d::encoders::{build_encoder, ForwardOptions, Preset};
use infomax3d::{Tape64, Tensor, Var};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scores(tape: &mut Tape64, b: usize, l: usize, values: &[f64]) -> infomax3d::dim::ScoreTensor {
    let v = tape.variable(Tensor::from_f64(&[b, b, l], values).unwrap());
    tape.as_scores(v).unwrap()
}

fn value(tape: &Tape64, v: Var) -> f64 {
    tape.value(v).item().unwrap()
}

#[test]
fn jsd_constants() {
    let mut t = Tape64::new();
    let s = scores(&mut t, 3, 4, &[0.0; 36]);
    let j = t.jsd_objective(s).unwrap();
    assert!((value(&t, j) + 2.0 * 2f64.ln()).abs() < 1e-6);

    let s = scores(&mut t, 2, 1, &[1., -1., -1., 1.]);
    let j = t.jsd_objective(s).unwrap();
    let sp = (1.0 + (-1f64).exp()).ln();
    assert!((value(&t, j) + 2.0 * sp).abs() < 1e-12);
    assert!((value(&t, j) + 0.626523).abs() < 1e-6);

    let s = scores(&mut t, 2, 1, &[60., -60., -60., 60.]);
    let j = t.jsd_objective(s).unwrap();
    assert!(value(&t, j).abs() < 1e-20 && value(&t, j) <= 0.0);
}

#[test]
fn nce_constants() {
    let mut t = Tape64::new();
    for b in 2..6 {
        let s = scores(&mut t, b, 3, &vec![0.7; b * b * 3]);
        let n = t.nce_objective(s).unwrap();
        assert!((value(&t, n) + (b as f64).ln()).abs() < 1e-12);
    }
    let mut v = vec![0.0; 3 * 3 * 2];
    for i in 0..3 {
        for l in 0..2 {
            v[(i * 3 + i) * 2 + l] = 1000.0;
        }
    }
    let s = scores(&mut t, 3, 2, &v);
    let n = t.nce_objective(s).unwrap();
    assert!(value(&t, n).abs() < 1e-9);
}

#[test]
fn dv_constants() {
    let mut t = Tape64::new();
    let p = t.constant(Tensor::zeros(&[4]));
    let n = t.constant(Tensor::zeros(&[6]));
    let d = t.dv_estimate(p, n).unwrap();
    assert_eq!(value(&t, d), 0.0);
    let p = t.constant(Tensor::ones(&[2]));
    let n = t.constant(Tensor::zeros(&[2]));
    let d = t.dv_estimate(p, n).unwrap();
    assert!((value(&t, d) - 1.0).abs() < 1e-15);
    let empty = t.constant(Tensor::new(&[0], vec![]).unwrap_or_else(|_| Tensor::zeros(&[1])));
    if t.value(empty).numel() == 0 {
        assert!(t.dv_estimate(p, empty).is_err());
    }
}

#[test]
fn pair_scores_by_hand() {
    let mut t = Tape64::new();
    // B=3, E=2, L=2
    let local = t.constant(Tensor::from_f64(&[3, 2, 2], &[1., 2., 0., 1., -1., 0., 3., 2., 0.5, 1., 1., -2.]).unwrap());
    let global = t.constant(Tensor::from_f64(&[3, 2], &[1., 0., 0., 1., 2., -1.]).unwrap());
    let s = t.pair_scores(local, global).unwrap();
    let v = t.value(s.scores).data().to_vec();
    let loc = |i: usize, e: usize, l: usize| [1., 2., 0., 1., -1., 0., 3., 2., 0.5, 1., 1., -2.][(i * 2 + e) * 2 + l];
    let glob = |j: usize, e: usize| [1., 0., 0., 1., 2., -1.][j * 2 + e];
    for i in 0..3 {
        for j in 0..3 {
            for l in 0..2 {
                let want = loc(i, 0, l) * glob(j, 0) + loc(i, 1, l) * glob(j, 1);
                assert_eq!(v[(i * 3 + j) * 2 + l], want);
            }
        }
    }

    // orthogonal embeddings across samples
    let local = t.constant(Tensor::from_f64(&[2, 2, 1], &[1., 0., 0., 1.]).unwrap());
    let global = t.constant(Tensor::from_f64(&[2, 2], &[1., 0., 0., 1.]).unwrap());
    let s = t.pair_scores(local, global).unwrap();
    assert_eq!(t.value(s.scores).data(), &[1., 0., 0., 1.]);

    let one = t.constant(Tensor::zeros(&[1, 2, 1]));
    let g1 = t.constant(Tensor::zeros(&[1, 2]));
    assert!(t.pair_scores(one, g1).is_err());
}

#[test]
fn identical_samples_give_identical_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let nets = StatisticsNetworks::<f64>::new(3, 5, 16, &mut rng);
    let sample = Tensor::randn(&[1, 3, 2, 2, 2], 1.0, &mut rng);
    let local = Tensor::stack_outer(&[&sample, &sample]).unwrap();
    let zs = Tensor::randn(&[1, 5], 1.0, &mut rng);
    let z = Tensor::stack_outer(&[&zs, &zs]).unwrap();
    let mut t = Tape64::new();
    let (lv, zv) = (t.constant(local), t.constant(z));
    let s = compute_scores(&mut t, &nets, lv, zv).unwrap();
    let v = t.value(s.scores).data();
    let l = s.locations;
    assert_eq!(&v[..l], &v[l..2 * l]);
}

#[test]
fn l1_examples() {
    let mut t = Tape64::new();
    t.param("w", Tensor::from_f64(&[3], &[1., -2., 0.]).unwrap());
    let p = l1_penalty(&mut t, 1.0).unwrap();
    assert_eq!(value(&t, p), 3.0);
    let p = l1_penalty(&mut t, 0.0).unwrap();
    assert_eq!(value(&t, p), 0.0);
    assert!(l1_penalty(&mut t, -0.5).is_err());
    let p = l1_penalty(&mut t, 2.0).unwrap();
    let g = t.backward(p).unwrap();
    assert_eq!(g.param("w", &t).unwrap().data(), &[2., -2., 0.]);
}

fn dim_fixture() -> (infomax3d::encoders::Encoder<f64>, StatisticsNetworks<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let enc = build_encoder::<f64, _>(Preset::DimAlexNetMini, 32, 4, &mut rng).unwrap();
    let nets = StatisticsNetworks::new(24, 32, 32, &mut rng);
    let x = Tensor::randn(&[4, 1, 32, 32, 32], 1.0, &mut rng);
    (enc, nets, x)
}

#[test]
fn local_loss_is_batch_permutation_invariant() {
    let (mut enc, nets, x) = dim_fixture();
    let perm = [2usize, 0, 3, 1];
    let parts: Vec<Tensor<f64>> = perm.iter().map(|&i| x.slice_outer(i).unwrap()).collect();
    let xp = Tensor::stack_outer(&parts.iter().collect::<Vec<_>>()).unwrap();
    for est in [Estimator::Jsd, Estimator::Nce] {
        let mut vals = Vec::new();
        for input in [&x, &xp] {
            let mut t = Tape64::new();
            let v = t.constant(input.clone());
            let step = local_dim_loss(&mut t, &mut enc, &nets, v, est, ForwardOptions::eval()).unwrap();
            vals.push(value(&t, step.loss));
        }
        assert!((vals[0] - vals[1]).abs() < 1e-10, "{est}: {vals:?}");
    }
}

#[test]
fn every_encoder_layer_receives_gradient() {
    let (mut enc, nets, x) = dim_fixture();
    let mut t = Tape64::new();
    let v = t.constant(x);
    let step = local_dim_loss(&mut t, &mut enc, &nets, v, Estimator::Jsd, ForwardOptions::train()).unwrap();
    let g = t.backward(step.loss).unwrap();
    for layer in ["conv1", "conv2", "conv3", "conv4", "conv5", "fc1", "fc2"] {
        let norm = g.param(&format!("{layer}.weight"), &t).unwrap().sq_norm();
        assert!(norm > 0.0, "{layer} got no gradient");
    }
    assert!(g.param("stats.local1.weight", &t).unwrap().sq_norm() > 0.0);
    assert!(g.param("stats.global2.weight", &t).unwrap().sq_norm() > 0.0);
}

#[test]
fn single_location_is_the_global_estimator() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let nets = StatisticsNetworks::<f64>::new(3, 4, EMBED_DIM, &mut rng);
    let local = Tensor::randn(&[3, 3, 1, 1, 1], 1.0, &mut rng);
    let z = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let mut t = Tape64::new();
    let (lv, zv) = (t.constant(local), t.constant(z));
    let s = compute_scores(&mut t, &nets, lv, zv).unwrap();
    assert_eq!(s.locations, 1);
    let jsd = t.jsd_objective(s).unwrap();
    let v = t.value(s.scores).data().to_vec();
    let sp = |x: f64| (1.0 + x.exp()).ln();
    let pos: f64 = (0..3).map(|i| -sp(-v[i * 3 + i])).sum::<f64>() / 3.0;
    let neg: f64 = (0..3).flat_map(|i| (0..3).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| sp(v[i * 3 + j])).sum::<f64>() / 6.0;
    assert!((value(&t, jsd) - (pos - neg)).abs() < 1e-12);
}

fn random_scores(b: usize, l: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    prop::collection::vec(-20.0f64..20.0, b * b * l).prop_map(move |v| (b, l, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn nce_never_exceeds_log_b((b, l, v) in (2usize..7, 1usize..4).prop_flat_map(|(b, l)| random_scores(b, l))) {
        let mut t = Tape64::new();
        let s = scores(&mut t, b, l, &v);
        let n = t.nce_objective(s).unwrap();
        let obj = value(&t, n);
        prop_assert!(obj <= 1e-12);
        prop_assert!(obj + (b as f64).ln() <= (b as f64).ln() + 1e-12);
        let j = t.jsd_objective(s).unwrap();
        prop_assert!(value(&t, j) <= 0.0);
    }

    #[test]
    fn objectives_invariant_under_sample_permutation((b, l, v) in (3usize..6, 1usize..3).prop_flat_map(|(b, l)| random_scores(b, l)), rot in 1usize..5) {
        let perm: Vec<usize> = (0..b).map(|i| (i + rot) % b).collect();
        let mut pv = vec![0.0; v.len()];
        for i in 0..b { for j in 0..b { for k in 0..l {
            pv[(perm[i] * b + perm[j]) * l + k] = v[(i * b + j) * l + k];
        }}}
        let mut t = Tape64::new();
        let (s1, s2) = (scores(&mut t, b, l, &v), scores(&mut t, b, l, &pv));
        for nce in [false, true] {
            let (a, c) = if nce {
                (t.nce_objective(s1).unwrap(), t.nce_objective(s2).unwrap())
            } else {
                (t.jsd_objective(s1).unwrap(), t.jsd_objective(s2).unwrap())
            };
            prop_assert!((value(&t, a) - value(&t, c)).abs() < 1e-10);
        }
    }

    #[test]
    fn scaling_a_representation_scales_its_column(c in -3.0f64..3.0, j in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let local = Tensor::randn(&[3, 4, 2], 1.0, &mut rng);
        let global = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let mut scaled = global.clone();
        for e in 0..4 { scaled.data_mut()[j * 4 + e] *= c; }
        let mut t = Tape64::new();
        let (l1, g1, g2) = (t.constant(local), t.constant(global), t.constant(scaled));
        let a = t.pair_scores(l1, g1).unwrap();
        let b = t.pair_scores(l1, g2).unwrap();
        let (va, vb) = (t.value(a.scores).data().to_vec(), t.value(b.scores).data().to_vec());
        for i in 0..3 { for jj in 0..3 { for k in 0..2 {
            let idx = (i * 3 + jj) * 2 + k;
            let want = if jj == j { va[idx] * c } else { va[idx] };
            prop_assert!((vb[idx] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }}}
    }
}
