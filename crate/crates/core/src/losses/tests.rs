use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::autodiff::{Backend, Eval, Graph, Tensor, Trainable};
use crate::interpolant::InterpolantSchedule;
use crate::nets::{AverageVelocity, Condition, Discriminator, FlowMapConfig, FlowMapModel, Params, WeightNet};
use crate::oracle::{random_probes, GaussianOracle, GaussianTask};
use crate::schedule::{sample_pair, GridConfig, GridTime, Setting, TimestepPair};

fn small_config(dim: usize) -> FlowMapConfig {
    FlowMapConfig {
        hidden: 16,
        depth: 2,
        time_embed_dim: 8,
        cond_dim: 4,
        zero_init_final: false,
        ..FlowMapConfig::new(dim)
    }
}

fn random_model(dim: usize, seed: u64) -> FlowMapModel {
    FlowMapModel::new(small_config(dim), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// A model whose output is `c` for every input.
fn constant_model(c: &[f64]) -> FlowMapModel {
    let config = FlowMapConfig {
        zero_init_final: true,
        ..small_config(c.len())
    };
    let mut m = FlowMapModel::new(config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut p = Params::new();
    p.insert("model.layer2.bias".into(), Tensor::new(vec![1, c.len()], c.to_vec()).unwrap());
    m.update_params(&p).unwrap();
    m
}

/// Copies the positive condition embedding onto the negative one.
fn merge_branches(m: &mut FlowMapModel) {
    let table = m.params()["model.cond_table"].clone();
    let d = table.cols();
    let mut data = table.data().to_vec();
    let (pos, neg) = (Condition::Positive.index(), Condition::Negative.index());
    let row: Vec<f64> = data[pos * d..(pos + 1) * d].to_vec();
    data[neg * d..(neg + 1) * d].copy_from_slice(&row);
    let mut p = Params::new();
    p.insert("model.cond_table".into(), Tensor::new(table.shape().to_vec(), data).unwrap());
    m.update_params(&p).unwrap();
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Random `(s, t)` with `t - s >= 0.05`.
fn random_times(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    (0..n)
        .map(|_| {
            let t = rng.random_range(0.05..1.0);
            (rng.random_range(0.0..t - 0.049), t)
        })
        .unzip()
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.sub(b).unwrap().max_abs()
}

#[test]
fn fm_loss_examples() {
    let sched = InterpolantSchedule::standard();
    let zero = FlowMapModel::new(FlowMapConfig::new(2), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let x0 = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
    let x1 = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
    let rows = PairRows {
        x0: &x0,
        x1: &x1,
        s: &[0.5],
        t: &[0.5],
        cond: &[Condition::Null],
    };
    assert_eq!(fm_loss(&mut Eval, &zero, &rows, &sched).unwrap().item().unwrap(), 2.0);
    let exact = constant_model(&[1.0, 1.0]);
    assert_eq!(fm_loss(&mut Eval, &exact, &rows, &sched).unwrap().item().unwrap(), 0.0);
}

#[test]
fn fm_loss_bias_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = random_model(3, 3);
    let (x0, x1) = (gaussian(&mut rng, 5, 3), gaussian(&mut rng, 5, 3));
    let (_, t) = random_times(&mut rng, 5);
    let sched = InterpolantSchedule::standard();
    let rows = PairRows {
        x0: &x0,
        x1: &x1,
        s: &t,
        t: &t,
        cond: &[Condition::Positive; 5],
    };
    let mut g = Graph::new();
    let loss = fm_loss(&mut g, &model, &rows, &sched).unwrap();
    let name = "model.layer2.bias";
    let grad = g.grad(loss, [(name, &model.params()[name])]).unwrap().remove(name).unwrap();
    let h = 1e-6;
    for k in 0..3 {
        let eval_at = |delta: f64| {
            let mut m = model.clone();
            let mut b = model.params()[name].data().to_vec();
            b[k] += delta;
            let mut p = Params::new();
            p.insert(name.into(), Tensor::new(vec![1, 3], b).unwrap());
            m.update_params(&p).unwrap();
            fm_loss(&mut Eval, &m, &rows, &sched).unwrap().item().unwrap()
        };
        let fd = (eval_at(h) - eval_at(-h)) / (2.0 * h);
        let rel = (grad.data()[k] - fd).abs() / fd.abs().max(1e-8);
        assert!(rel < 1e-5, "component {k}: {} vs {fd}", grad.data()[k]);
    }
}

#[test]
fn constant_field_targets() {
    let c = [0.3, -1.2];
    let model = constant_model(&c);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (x0, x1) = (gaussian(&mut rng, 6, 2), gaussian(&mut rng, 6, 2));
    let (s, t) = random_times(&mut rng, 6);
    let cond = [Condition::Null; 6];
    let rows = PairRows {
        x0: &x0,
        x1: &x1,
        s: &s,
        t: &t,
        cond: &cond,
    };
    let sched = InterpolantSchedule::standard();
    let v = fm_target(&rows, &sched).unwrap();
    let ssd = sd_target(Setting::Ssd, &model, &rows, &sched, VelocitySource::Conditional).unwrap();
    for row in 0..6 {
        assert_eq!(ssd.row(row), &c);
    }
    for setting in [Setting::Lsd, Setting::Esd] {
        let tgt = sd_target(setting, &model, &rows, &sched, VelocitySource::Conditional).unwrap();
        assert_eq!(tgt, v, "{setting}");
    }
    let loss = sd_loss(&mut Eval, Setting::Ssd, &model, &rows, &sched, VelocitySource::Conditional).unwrap();
    assert_eq!(loss.item().unwrap(), 0.0);
    for w in [1.0, 2.0, 3.5] {
        let tgt = cfg_sd_target(Setting::Ssd, &model, &rows, &sched, VelocitySource::Conditional, &[w; 6]).unwrap();
        assert_eq!(tgt, ssd);
    }
}

#[test]
fn sd_target_rejects_degenerate_times() {
    let model = random_model(2, 5);
    let x = Tensor::zeros(&[1, 2]);
    let sched = InterpolantSchedule::standard();
    for (s, t) in [(0.5, 0.5), (0.7, 0.3)] {
        let rows = PairRows {
            x0: &x,
            x1: &x,
            s: &[s],
            t: &[t],
            cond: &[Condition::Null],
        };
        for setting in Setting::ALL {
            assert!(sd_target(setting, &model, &rows, &sched, VelocitySource::Conditional).is_err());
        }
    }
}

#[test]
fn oracle_targets_match_the_true_average_velocity() {
    let task = GaussianTask::new(vec![1.0, -0.5], 0.5, vec![0.0, 0.0], 1.0).unwrap();
    let oracle = GaussianOracle::new(task.clone());
    let probes = random_probes(&task, 100, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let x: Vec<Vec<f64>> = probes.iter().map(|p| p.x.clone()).collect();
    let x = Tensor::from_rows(&x).unwrap();
    let s: Vec<f64> = probes.iter().map(|p| p.s).collect();
    let t: Vec<f64> = probes.iter().map(|p| p.t).collect();
    let cond = vec![Condition::Null; probes.len()];
    let rows = PairRows {
        x0: &x,
        x1: &x,
        s: &s,
        t: &t,
        cond: &cond,
    };
    let sched = InterpolantSchedule::standard();
    let truth = oracle.average_velocity(&x, &s, &t, &cond).unwrap();
    for setting in Setting::ALL {
        let tgt = sd_target(setting, &oracle, &rows, &sched, VelocitySource::Marginal).unwrap();
        let diff = tgt.sub(&truth).unwrap();
        let worst = diff.row_sq_norms().iter().fold(0.0f64, |m, v| m.max(v.sqrt()));
        assert!(worst < 1e-3, "{setting}: {worst}");
    }
}

#[test]
fn sd_loss_is_the_regression_onto_a_detached_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = random_model(3, 8);
    let (x0, x1) = (gaussian(&mut rng, 4, 3), gaussian(&mut rng, 4, 3));
    let (s, t) = random_times(&mut rng, 4);
    let cond = [Condition::Positive; 4];
    let rows = PairRows {
        x0: &x0,
        x1: &x1,
        s: &s,
        t: &t,
        cond: &cond,
    };
    let sched = InterpolantSchedule::standard();
    for setting in Setting::ALL {
        let src = VelocitySource::Conditional;
        let loss = sd_loss(&mut Eval, setting, &model, &rows, &sched, src).unwrap().item().unwrap();
        let target = sd_target(setting, &model, &rows, &sched, src).unwrap();
        let it = rows.interpolant(&sched).unwrap();
        let u = model.average_velocity(&it, &s, &t, &cond).unwrap();
        let manual = u.sub(&target).unwrap().row_sq_norms().iter().sum::<f64>() / 4.0;
        assert!((loss - manual).abs() < 1e-12, "{setting}");

        // Gradients equal those of a regression onto a target built by a
        // separate copy of the model: nothing flows through the target.
        let mut g = Graph::new();
        let l = sd_loss(&mut g, setting, &model, &rows, &sched, src).unwrap();
        let grads = g.grad(l, model.params().iter().map(|(k, v)| (k.as_str(), v))).unwrap();
        let copy = model.clone();
        let frozen = sd_target(setting, &copy, &rows, &sched, src).unwrap();
        let mut g2 = Graph::new();
        let xv = g2.constant(it.clone());
        let sv = g2.constant(Tensor::column(&s).unwrap());
        let tv = g2.constant(Tensor::column(&t).unwrap());
        let out = model
            .forward(&mut g2, &xv, &sv, &tv, &Condition::one_hot(&cond).unwrap(), 1.0)
            .unwrap();
        let tgt = g2.constant(frozen);
        let d = g2.sub(&out, &tgt).unwrap();
        let sq = g2.square(&d);
        let total = g2.sum(&sq);
        let l2 = g2.scale(&total, 0.25);
        let grads2 = g2.grad(l2, model.params().iter().map(|(k, v)| (k.as_str(), v))).unwrap();
        assert_eq!(grads, grads2, "{setting}");
    }
}

#[test]
fn cfg_fm_target_examples() {
    let sched = InterpolantSchedule::standard();
    let x0 = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
    let x1 = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let rows = PairRows {
        x0: &x0,
        x1: &x1,
        s: &[0.3],
        t: &[0.3],
        cond: &[Condition::Positive],
    };
    let v = fm_target(&rows, &sched).unwrap();
    let random = random_model(2, 9);
    assert_eq!(cfg_fm_target(&random, &rows, &sched, &[1.0]).unwrap(), v);
    let zero = FlowMapModel::new(FlowMapConfig::new(2), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    assert_eq!(cfg_fm_target(&zero, &rows, &sched, &[2.0]).unwrap().data(), &[2.0, 0.0]);
    let same = constant_model(&[1.0, 0.0]);
    assert_eq!(cfg_fm_target(&same, &rows, &sched, &[2.0]).unwrap(), v);
}

#[test]
fn guidance_context_invariants_and_drop_rate() {
    assert!(GuidanceContext::guided(0.5, 3.5).is_err());
    assert!(GuidanceContext::guided(4.0, 3.5).is_err());
    assert!(GuidanceContext::guided(1.0, 1.0).is_err());
    let d = GuidanceContext::dropped(3.5).unwrap();
    assert!(d.is_dropped() && d.w() == 1.0 && d.cond() == Condition::Negative);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let mut drops = 0;
    for _ in 0..n {
        let ctx = GuidanceContext::sample(DEFAULT_W_MAX, DEFAULT_DROP_PROB, &mut rng).unwrap();
        assert!((1.0..=DEFAULT_W_MAX).contains(&ctx.w()));
        if ctx.is_dropped() {
            assert_eq!(ctx.w(), 1.0);
            drops += 1;
        } else {
            assert_eq!(ctx.cond(), Condition::Positive);
        }
    }
    let rate = drops as f64 / n as f64;
    assert!((rate - 0.10).abs() < 0.01, "{rate}");
}

#[test]
fn guided_targets_reduce_to_plain_ones() {
    let mut model = random_model(3, 12);
    merge_branches(&mut model);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 100;
    let (x0, x1) = (gaussian(&mut rng, n, 3), gaussian(&mut rng, n, 3));
    let (s, t) = random_times(&mut rng, n);
    let cond = vec![Condition::Positive; n];
    let rows = PairRows {
        x0: &x0,
        x1: &x1,
        s: &s,
        t: &t,
        cond: &cond,
    };
    let sched = InterpolantSchedule::standard();
    for setting in Setting::ALL {
        for src in [VelocitySource::Conditional, VelocitySource::Marginal] {
            let plain = sd_target(setting, &model, &rows, &sched, src).unwrap();
            let guided = cfg_sd_target(setting, &model, &rows, &sched, src, &vec![1.0; n]).unwrap();
            assert!(max_diff(&plain, &guided) < 1e-12, "{setting} {src:?}");
        }
        // With coinciding branches the marginal stand-ins agree, so any w
        // cancels.
        let src = VelocitySource::Marginal;
        let plain = sd_target(setting, &model, &rows, &sched, src).unwrap();
        let guided = cfg_sd_target(setting, &model, &rows, &sched, src, &vec![2.5; n]).unwrap();
        assert!(max_diff(&plain, &guided) < 1e-12, "{setting} w=2.5");
    }
}

#[test]
fn guided_targets_cost_the_stated_extra_evaluations() {
    let model = random_model(2, 14);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (x0, x1) = (gaussian(&mut rng, 3, 2), gaussian(&mut rng, 3, 2));
    let (s, t) = random_times(&mut rng, 3);
    let cond = [Condition::Positive; 3];
    let rows = PairRows {
        x0: &x0,
        x1: &x1,
        s: &s,
        t: &t,
        cond: &cond,
    };
    let sched = InterpolantSchedule::standard();
    let src = VelocitySource::Conditional;
    for (setting, extra) in [(Setting::Lsd, 2), (Setting::Esd, 1), (Setting::Ssd, 0)] {
        let calls = sd_target_calls();
        model.reset_evaluations();
        sd_target(setting, &model, &rows, &sched, src).unwrap();
        let plain = model.evaluations();
        model.reset_evaluations();
        cfg_sd_target(setting, &model, &rows, &sched, src, &[2.0; 3]).unwrap();
        assert_eq!(model.evaluations() - plain, extra, "{setting}");
        assert_eq!(sd_target_calls(), calls + 2);
    }
}

#[test]
fn perceptual_weight_and_regularizer() {
    assert_eq!(perceptual_weight(0.0), 5.0);
    assert!((perceptual_weight(1.0) - 5.0 * (-4.0f64).exp()).abs() < 1e-15);
    assert!((perceptual_weight(1.0) - 0.0916).abs() < 1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = gaussian(&mut rng, 3, 16);
    let layout = PoolLayout::Image { height: 4, width: 4 };
    assert_eq!(perceptual_reg(&x, &x, &[0.0, 0.5, 1.0], layout).unwrap(), 0.0);
    // Opposite neighbours cancel under pooling, leaving only the absolute
    // error.
    let a = Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap();
    let z = Tensor::zeros(&[1, 2]);
    assert_eq!(perceptual_reg(&a, &z, &[0.0], PoolLayout::Pairs).unwrap(), 2.5);
    let flat = Tensor::full(&[1, 16], 0.5);
    let r = perceptual_reg(&flat, &Tensor::zeros(&[1, 16]), &[0.0], layout).unwrap();
    assert!((r - 5.0 * (0.25 + 0.5) / 2.0).abs() < 1e-12);
    assert!(PoolLayout::Image { height: 3, width: 3 }.matrix(9).is_err());
    let m = PoolLayout::Pairs.matrix(5).unwrap();
    assert_eq!(m.shape(), &[5, 3]);
    for col in 0..3 {
        let total: f64 = (0..5).map(|r| m.data()[r * 3 + col]).sum();
        assert_eq!(total, 1.0);
    }
}

struct Setup {
    model: FlowMapModel,
    wn: WeightNet,
    x0: Tensor,
    x1: Tensor,
    pairs: Vec<TimestepPair>,
}

fn setup(n: usize, setting: Setting, seed: u64) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = random_model(4, seed + 100);
    let wn = WeightNet::new(8, &mut rng).unwrap();
    let (x0, x1) = (gaussian(&mut rng, n, 4), gaussian(&mut rng, n, 4));
    let cfg = GridConfig::default();
    let pairs = (0..n).map(|_| sample_pair(setting, &cfg, &mut rng)).collect();
    Setup {
        model,
        wn,
        x0,
        x1,
        pairs,
    }
}

fn options(setting: Setting) -> LossOptions {
    LossOptions {
        pool: PoolLayout::Image { height: 2, width: 2 },
        ..LossOptions::new(setting)
    }
}

#[test]
fn combined_loss_dispatch_and_zero_weighting() {
    for setting in Setting::ALL {
        let st = setup(32, setting, 17);
        let batch = TrainBatch {
            x0: &st.x0,
            x1: &st.x1,
            x0_neg: None,
            pairs: &st.pairs,
            guidance: None,
            cond: Condition::Null,
        };
        let (_, br) = combined_loss(&mut Eval, &st.model, &st.wn, &batch, &options(setting)).unwrap();
        assert_eq!(br.rows.len(), 32);
        for (row, pair) in br.rows.iter().zip(&st.pairs) {
            let want = if pair.is_fm() { LossTag::Fm } else { LossTag::Sd(setting) };
            assert_eq!(row.tag, want);
            assert_eq!(row.lambda, 0.0);
            assert_eq!(row.weighted, row.main + row.perceptual);
            assert!(row.perceptual >= 0.0);
        }
        assert!(br.perceptual > 0.0);
        assert!((br.weighted_total - (br.main + br.perceptual)).abs() < 1e-12);
    }
    let t = GridTime::new(1, 1).unwrap();
    let fm = TimestepPair::fm(t);
    let st = setup(1, Setting::Ssd, 18);
    let batch = TrainBatch {
        x0: &st.x0,
        x1: &st.x1,
        x0_neg: None,
        pairs: &[fm],
        guidance: None,
        cond: Condition::Null,
    };
    let (_, br) = combined_loss(&mut Eval, &st.model, &st.wn, &batch, &options(Setting::Ssd)).unwrap();
    assert_eq!(br.rows[0].tag, LossTag::Fm);
}

#[test]
fn combined_loss_lambda_gradient_and_reach() {
    let st = setup(16, Setting::Lsd, 19);
    let mut wn = st.wn.clone();
    let mut p = Params::new();
    p.insert("weightnet.l2.weight".into(), Tensor::full(&[1, 1], 0.7));
    wn.update_params(&p).unwrap();
    let batch = TrainBatch {
        x0: &st.x0,
        x1: &st.x1,
        x0_neg: None,
        pairs: &st.pairs,
        guidance: None,
        cond: Condition::Null,
    };
    let mut g = Graph::new();
    let (loss, br) = combined_loss(&mut g, &st.model, &wn, &batch, &options(Setting::Lsd)).unwrap();
    for r in &br.rows {
        let w = (-r.lambda).exp() * (r.main + r.perceptual) + r.lambda;
        assert!((w - r.weighted).abs() < 1e-12);
    }
    // lambda is affine in the last bias with unit slope.
    let bias = "weightnet.l2.bias";
    let grads = g.grad(loss, wn.params().iter().map(|(k, v)| (k.as_str(), v))).unwrap();
    let want = br
        .rows
        .iter()
        .map(|r| 1.0 - (-r.lambda).exp() * (r.main + r.perceptual))
        .sum::<f64>()
        / 16.0;
    assert!((grads[bias].data()[0] - want).abs() < 1e-12);
    let mgrads = g.grad(loss, st.model.params().iter().map(|(k, v)| (k.as_str(), v))).unwrap();
    assert!(mgrads.values().all(|t| t.is_finite()));
    assert!(mgrads["model.layer2.weight"].max_abs() > 0.0);
    assert!(grads["weightnet.l1.weight"].max_abs() > 0.0);
}

#[test]
fn dropped_rows_train_on_the_negative_target() {
    let st = setup(12, Setting::Esd, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let neg = gaussian(&mut rng, 12, 4);
    let ctx = vec![GuidanceContext::dropped(DEFAULT_W_MAX).unwrap(); 12];
    let guided = TrainBatch {
        x0: &st.x0,
        x1: &st.x1,
        x0_neg: Some(&neg),
        pairs: &st.pairs,
        guidance: Some(&ctx),
        cond: Condition::Positive,
    };
    let plain = TrainBatch {
        x0: &neg,
        x1: &st.x1,
        x0_neg: None,
        pairs: &st.pairs,
        guidance: None,
        cond: Condition::Negative,
    };
    let opts = options(Setting::Esd);
    let (_, a) = combined_loss(&mut Eval, &st.model, &st.wn, &guided, &opts).unwrap();
    let (_, b) = combined_loss(&mut Eval, &st.model, &st.wn, &plain, &opts).unwrap();
    assert!((a.weighted_total - b.weighted_total).abs() < 1e-12);
    assert!(a.rows.iter().all(|r| r.guided));
}

#[test]
fn rpgan_terms_at_parity() {
    let (g, d) = rpgan_terms(&[0.3, -2.0], &[0.3, -2.0]).unwrap();
    assert!((g - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((d - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(rpgan_terms(&[], &[]).is_err());
    let (g, d) = rpgan_terms(&[50.0], &[0.0]).unwrap();
    assert!((g - 50.0).abs() < 1e-12 && d < 1e-20);
}

#[test]
fn adversarial_gradients_respect_their_parameter_sets() {
    let mut st = setup(8, Setting::Ssd, 22);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    st.model.attach_lora(2, &mut rng).unwrap();
    let disc = Discriminator::new(4, &mut rng).unwrap();
    let ctx: Vec<GuidanceContext> = (0..8)
        .map(|_| GuidanceContext::sample(DEFAULT_W_MAX, DEFAULT_DROP_PROB, &mut rng).unwrap())
        .collect();
    let batch = TrainBatch {
        x0: &st.x0,
        x1: &st.x1,
        x0_neg: None,
        pairs: &st.pairs,
        guidance: Some(&ctx),
        cond: Condition::Positive,
    };
    let opts = options(Setting::Ssd);
    let mut g = Graph::with_trainable(Trainable::Prefixes(vec![ADAPTER_PREFIX.into()]));
    let (loss, adv, _) = generator_loss(
        &mut g,
        &st.model,
        &disc,
        &st.wn,
        &batch,
        &opts,
        DEFAULT_LAMBDA_ADV,
        Condition::Positive,
    )
    .unwrap();
    assert!(adv.is_finite());
    let grads = g.grad(loss, st.model.params().iter().map(|(k, v)| (k.as_str(), v))).unwrap();
    for (k, v) in &grads {
        if k.starts_with(ADAPTER_PREFIX) {
            if k.ends_with(".b") {
                assert!(v.max_abs() > 0.0, "{k}");
            }
        } else {
            assert_eq!(v.max_abs(), 0.0, "{k}");
        }
    }

    let mut g = Graph::with_trainable(Trainable::All);
    let loss = discriminator_loss(&mut g, &st.model, &disc, &st.x0, &st.x1, Condition::Positive, 1.0).unwrap();
    let grads = g.grad(loss, st.model.params().iter().map(|(k, v)| (k.as_str(), v))).unwrap();
    assert!(grads.values().all(|v| v.max_abs() == 0.0));
    let dgrads = g.grad(loss, disc.params().iter().map(|(k, v)| (k.as_str(), v))).unwrap();
    assert!(dgrads["disc.l2.weight"].max_abs() > 0.0);
}

#[test]
fn flat_discriminator_gives_ln2() {
    let st = setup(4, Setting::Ssd, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let mut disc = Discriminator::new(4, &mut rng).unwrap();
    let mut p = Params::new();
    p.insert("disc.l2.weight".into(), Tensor::zeros(&[1, 128]));
    disc.update_params(&p).unwrap();
    let batch = TrainBatch {
        x0: &st.x0,
        x1: &st.x1,
        x0_neg: None,
        pairs: &st.pairs,
        guidance: None,
        cond: Condition::Positive,
    };
    let opts = options(Setting::Ssd);
    let (_, adv, _) =
        generator_loss(&mut Eval, &st.model, &disc, &st.wn, &batch, &opts, 0.1, Condition::Positive).unwrap();
    assert!((adv - std::f64::consts::LN_2).abs() < 1e-12);
    let d = discriminator_loss(&mut Eval, &st.model, &disc, &st.x0, &st.x1, Condition::Positive, 1.0).unwrap();
    assert!((d.item().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
}
