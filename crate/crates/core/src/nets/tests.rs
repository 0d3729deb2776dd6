use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::Eval;
use crate::schedule::make_grid;

fn small_config(dim: usize) -> FlowMapConfig {
    FlowMapConfig {
        hidden: 24,
        depth: 2,
        zero_init_final: false,
        ..FlowMapConfig::new(dim)
    }
}

fn batch(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Tensor {
    uniform_tensor(rng, &[rows, dim], 1.5)
}

#[test]
fn embedding_at_zero_and_odd_dims() {
    let e = time_embed(0.0, 8).unwrap();
    assert_eq!(&e.data()[..4], &[0.0; 4]);
    assert_eq!(&e.data()[4..], &[1.0; 4]);
    assert!(time_embed(0.5, 7).is_err());
    for t in [0.0, 0.3, 1.0, 7.0] {
        let e = time_embed(t, 32).unwrap();
        assert!((e.norm() - 4.0).abs() < 1e-12);
    }
}

#[test]
fn grid_embeddings_are_distinct() {
    let embs: Vec<Tensor> = make_grid(7).iter().map(|&t| time_embed(t, 32).unwrap()).collect();
    let mut min = f64::INFINITY;
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            min = min.min(embs[i].sub(&embs[j]).unwrap().norm());
        }
    }
    assert!(min > 1e-3, "min pairwise distance {min}");
}

#[test]
fn zero_final_layer_gives_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = FlowMapModel::new(FlowMapConfig::new(3), &mut rng).unwrap();
    let x = batch(&mut rng, 4, 3);
    let u = model
        .average_velocity(&x, &[0.0, 0.1, 0.5, 1.0], &[0.0, 0.7, 0.5, 1.0], &[Condition::Null; 4])
        .unwrap();
    assert!(u.data().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_is_deterministic_and_checks_times() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = FlowMapModel::new(small_config(2), &mut rng).unwrap();
    let x = batch(&mut rng, 3, 2);
    let conds = [Condition::Positive, Condition::Negative, Condition::Null];
    let a = model.average_velocity(&x, &[0.2, 0.5, 0.5], &[0.4, 0.5, 1.0], &conds).unwrap();
    let b = model.average_velocity(&x, &[0.2, 0.5, 0.5], &[0.4, 0.5, 1.0], &conds).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), x.shape());
    assert!(model.average_velocity(&x, &[0.6, 0.5, 0.5], &[0.4, 0.5, 1.0], &conds).is_err());
    assert!(model.average_velocity(&x, &[0.2], &[0.4], &conds[..1]).is_err());
    assert_eq!(model.evaluations(), 2);
}

#[test]
fn conditions_change_the_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = FlowMapModel::new(small_config(2), &mut rng).unwrap();
    let x = batch(&mut rng, 1, 2);
    let p = model.average_velocity(&x, &[0.1], &[0.9], &[Condition::Positive]).unwrap();
    let n = model.average_velocity(&x, &[0.1], &[0.9], &[Condition::Negative]).unwrap();
    assert_ne!(p, n);
}

#[test]
fn lora_scale_zero_is_bit_exact_and_adapters_start_neutral() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = FlowMapModel::new(small_config(4), &mut rng).unwrap();
    let mut tuned = base.clone();
    tuned.attach_lora(3, &mut rng).unwrap();
    assert!(tuned.attach_lora(3, &mut rng).is_err());
    let x = batch(&mut rng, 5, 4);
    let (s, t) = ([0.0, 0.25, 0.5, 0.5, 0.9], [0.5, 0.25, 1.0, 0.75, 1.0]);
    let conds = [Condition::Positive; 5];
    let reference = base.average_velocity(&x, &s, &t, &conds).unwrap();
    // B = 0: adapters are inert at any scale.
    assert_eq!(tuned.with_lora_scale(1.5).average_velocity(&x, &s, &t, &conds).unwrap(), reference);

    // Perturb B so the adapters matter, then check gamma = 0.
    let mut perturbed = Params::new();
    for (k, v) in tuned.params() {
        if k.ends_with(".b") && k.starts_with("model.lora.") {
            perturbed.insert(k.clone(), uniform_tensor(&mut rng, v.shape(), 0.5));
        }
    }
    tuned.update_params(&perturbed).unwrap();
    let off = tuned.with_lora_scale(0.0).average_velocity(&x, &s, &t, &conds).unwrap();
    assert!(off.data().iter().zip(reference.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    let on = tuned.with_lora_scale(1.0).average_velocity(&x, &s, &t, &conds).unwrap();
    assert_ne!(on, reference);

    // Adapter forward equals a plain network with merged weights.
    let gamma = 1.5;
    let mut merged = Params::new();
    for i in 0..=2 {
        let name = format!("model.layer{i}.weight");
        let ad = tuned.adapter(i).unwrap();
        merged.insert(name.clone(), lora_effective_weight(&tuned.params()[&name], &ad, gamma).unwrap());
    }
    let mut flat = base.clone();
    flat.update_params(&merged).unwrap();
    let want = flat.average_velocity(&x, &s, &t, &conds).unwrap();
    let got = tuned.with_lora_scale(gamma).average_velocity(&x, &s, &t, &conds).unwrap();
    for (a, b) in got.data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn effective_weight_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = uniform_tensor(&mut rng, &[4, 3], 1.0);
    let a = uniform_tensor(&mut rng, &[2, 3], 1.0);
    let b = uniform_tensor(&mut rng, &[4, 2], 1.0);
    let ad = LowRankAdapter::new(a.clone(), b.clone()).unwrap();
    assert_eq!(lora_effective_weight(&w, &ad, 0.0).unwrap(), w);
    let zero_a = LowRankAdapter::new(Tensor::zeros(&[2, 3]), b.clone()).unwrap();
    assert_eq!(lora_effective_weight(&w, &zero_a, 7.0).unwrap(), w);
    let diff = lora_effective_weight(&w, &ad, 2.0)
        .unwrap()
        .sub(&lora_effective_weight(&w, &ad, 1.0).unwrap())
        .unwrap();
    let ba = b.matmul(&a).unwrap();
    for (p, q) in diff.data().iter().zip(ba.data()) {
        assert!((p - q).abs() < 1e-12);
    }
    assert!(LowRankAdapter::new(a.clone(), uniform_tensor(&mut rng, &[4, 3], 1.0)).is_err());
    let wide = LowRankAdapter::new(uniform_tensor(&mut rng, &[2, 5], 1.0), b).unwrap();
    assert!(lora_effective_weight(&w, &wide, 1.0).is_err());
}

#[test]
fn weightnet_starts_at_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let wn = WeightNet::new(32, &mut rng).unwrap();
    for (s, t) in [(0.0, 0.0), (0.1, 0.9), (0.5, 1.0), (1.0, 1.0)] {
        let l = wn.lambda(s, t).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!((-l).exp(), 1.0);
    }
}

#[test]
fn discriminator_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d = Discriminator::new(3, &mut rng).unwrap();
    let z = Tensor::from_rows(&[vec![0.5, -1.0, 1.0], vec![0.5, -1.0, 1.0]]).unwrap();
    let s = d.score(&z).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(s[0], s[1]);
    assert!(s[0].is_finite());
    assert!(d.score(&Tensor::zeros(&[2, 4])).is_err());
}

#[test]
fn joint_jvp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = FlowMapModel::new(small_config(3), &mut rng).unwrap();
    let x = batch(&mut rng, 4, 3);
    let dx = batch(&mut rng, 4, 3);
    let s = [0.1, 0.2, 0.3, 0.45];
    let t = [0.6, 0.5, 0.9, 0.55];
    let conds = [Condition::Positive, Condition::Null, Condition::Negative, Condition::Null];
    let (ds, dt) = (0.7, -0.4);
    let (_, d) = model
        .average_velocity_jvp(&x, &s, &t, &conds, Some(&dx), ds, dt)
        .unwrap();
    let h = 1e-5;
    let shifted = |sign: f64| {
        let xs = x.axpy(sign * h, &dx).unwrap();
        let ss: Vec<f64> = s.iter().map(|v| v + sign * h * ds).collect();
        let ts: Vec<f64> = t.iter().map(|v| v + sign * h * dt).collect();
        model.average_velocity(&xs, &ss, &ts, &conds).unwrap()
    };
    let fd = shifted(1.0).sub(&shifted(-1.0)).unwrap().scale(0.5 / h);
    for (a, b) in d.data().iter().zip(fd.data()) {
        let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
        assert!(rel < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn graph_forward_matches_eager() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = FlowMapModel::new(small_config(2), &mut rng).unwrap();
    let x = batch(&mut rng, 3, 2);
    let (s, t) = (Tensor::column(&[0.0, 0.2, 0.4]).unwrap(), Tensor::column(&[0.5, 0.2, 1.0]).unwrap());
    let oh = Condition::one_hot(&[Condition::Null; 3]).unwrap();
    let eager = model.forward(&mut Eval, &x, &s, &t, &oh, 1.0).unwrap();
    let mut g = crate::autodiff::Graph::new();
    let (xv, sv, tv) = (g.constant(x.clone()), g.constant(s), g.constant(t));
    let out = model.forward(&mut g, &xv, &sv, &tv, &oh, 1.0).unwrap();
    assert_eq!(g.get(out), &eager);
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = FlowMapModel::new(small_config(3), &mut rng).unwrap();
    let mut ck = Checkpoint::default();
    ck.metadata.insert("schedule".into(), "standard".into());
    ck.metadata.insert("config".into(), "[model]\nhidden = 24\n".into());
    ck.tensors = model.params().clone();
    ck.tensors.insert("scalar".into(), Tensor::scalar(-0.0));
    let bytes = ck.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.metadata, ck.metadata);
    for (k, v) in &ck.tensors {
        let w = &back.tensors[k];
        assert_eq!(v.shape(), w.shape());
        assert!(v.data().iter().zip(w.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    assert_eq!(back.meta("schedule").unwrap(), "standard");
    assert!(back.meta("phase").is_err());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
    let mut long = bytes;
    long.push(0);
    assert!(Checkpoint::from_bytes(&long).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    let again = FlowMapModel::from_params(small_config(3), Checkpoint::load(&path).unwrap().tensors).unwrap();
    let x = batch(&mut rng, 2, 3);
    let c = [Condition::Positive; 2];
    assert_eq!(
        again.average_velocity(&x, &[0.1, 0.2], &[0.5, 0.9], &c).unwrap(),
        model.average_velocity(&x, &[0.1, 0.2], &[0.5, 0.9], &c).unwrap()
    );
}
