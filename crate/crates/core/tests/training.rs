use metareg::data::gen_dataset;
use metareg::error::Error;
use metareg::losses::{total_loss, LossWeights};
use metareg::meta::*;
use metareg::models::{RegNet, RegNetConfig};
use metareg::optim::LinearDecay;
use metareg::params::ParamVector;
use metareg::seeds::{rng, Stream};
use metareg::transforms::AffineRanges;
use rand::Rng;

fn small_net(seed: u64) -> RegNet {
    let cfg = RegNetConfig {
        enc1: 4,
        enc2: 4,
        enc3: 6,
        bottleneck: 6,
        dec2: 4,
        dec1: 4,
        leaky_slope: 0.2,
    };
    RegNet::init(cfg, &mut rng(seed, Stream::Init, 0)).unwrap()
}

/// A network whose head is non-zero, so its prediction depends on the input.
fn perturbed_net(seed: u64) -> RegNet {
    let net = small_net(seed);
    let mut r = rng(seed, Stream::Init, 1);
    let mut p = net.params().clone();
    p.values_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.01..0.01));
    net.with_params(p).unwrap()
}

fn pairs(seed: u64, n: usize) -> Vec<ImagePair> {
    gen_dataset(seed, n, [16; 3], 2.0)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, c)| ImagePair::from_case(i, c))
        .collect()
}

fn episode_cfg(k: usize, inner_batch: usize, augment: AffineRanges) -> EpisodeConfig {
    EpisodeConfig {
        k,
        inner_batch,
        inner_lr: 1e-3,
        augment,
        loss_weights: LossWeights::default(),
    }
}

/// One bias-corrected Adam step from zero moments, in double precision:
/// m̂ = g and v̂ = g², so the update is `lr·g/(|g| + eps)`.
fn hand_adam_step(params: &ParamVector, grad: &ParamVector, lr: f64) -> Vec<f64> {
    params
        .values()
        .iter()
        .zip(grad.values())
        .map(|(&p, &g)| {
            let (m, v) = (0.1 * g as f64 / 0.1, 0.001 * (g as f64).powi(2) / 0.001);
            p as f64 - lr * m / (v.sqrt() + 1e-8)
        })
        .collect()
}

fn assert_close(got: &ParamVector, want: &[f64], rel: f64) {
    for (i, (&g, &w)) in got.values().iter().zip(want).enumerate() {
        let err = (g as f64 - w).abs() / w.abs().max(1e-3);
        assert!(err <= rel, "index {i}: got {g}, want {w}");
    }
}

#[test]
fn episode_without_steps_returns_omega() {
    let net = perturbed_net(1);
    let p = &pairs(1, 1)[0];
    let ep = run_episode(&net, p, &episode_cfg(0, 1, AffineRanges::default()), &mut rng(1, Stream::Meta, 0)).unwrap();
    assert_eq!(&ep.theta, net.params());
    assert!(ep.losses.is_empty());
}

#[test]
fn single_step_episode_is_one_adam_step() {
    let net = perturbed_net(2);
    let p = &pairs(2, 1)[0];
    let cfg = episode_cfg(1, 1, AffineRanges::none());
    let before = net.params().clone();
    let ep = run_episode(&net, p, &cfg, &mut rng(2, Stream::Meta, 0)).unwrap();
    assert_eq!(net.params(), &before);
    let (loss, grad) = loss_and_gradient(&net, net.params(), &p.moving, &p.fixed, cfg.loss_weights).unwrap();
    assert_eq!(ep.losses, vec![loss]);
    assert_close(&ep.theta, &hand_adam_step(net.params(), &grad, cfg.inner_lr as f64), 1e-6);
}

#[test]
fn episodes_are_deterministic() {
    let net = perturbed_net(3);
    let p = &pairs(3, 1)[0];
    let cfg = episode_cfg(2, 2, AffineRanges::default());
    let a = run_episode(&net, p, &cfg, &mut rng(9, Stream::Meta, 0)).unwrap();
    let b = run_episode(&net, p, &cfg, &mut rng(9, Stream::Meta, 0)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn non_finite_episode_reports_its_step() {
    let net = perturbed_net(4);
    let p = &pairs(4, 1)[0];
    let mut data = p.moving.data().to_vec();
    data[100] = f32::NAN;
    let bad = ImagePair::new(0, p.moving.with_data(data).unwrap(), p.fixed.clone()).unwrap();
    let err = run_episode(&net, &bad, &episode_cfg(3, 1, AffineRanges::none()), &mut rng(4, Stream::Meta, 0));
    assert!(matches!(err, Err(Error::NonFinite { step: 0 })));

    let meta = MetaConfig {
        total_inner_iterations: 10,
        beta_schedule: LinearDecay::new(0.5, 1e-5, 10).unwrap(),
        episode: episode_cfg(1, 1, AffineRanges::none()),
        seed: 4,
    };
    let err = meta_train(&[bad], &meta, net, |_| {});
    assert!(matches!(err, Err(Error::TooManyAborts { episode: 3, consecutive: 4 })));
}

#[test]
fn reptile_examples() {
    let zero = ParamVector::zeros(small_net(5).params().layout().clone());
    let mut one = zero.clone();
    one.values_mut().iter_mut().for_each(|v| *v = 1.0);
    assert!(reptile_update(&zero, &one, 0.5).unwrap().values().iter().all(|&v| v == 0.5));
    let omega = perturbed_net(5).into_params();
    let theta = perturbed_net(6).into_params();
    assert_eq!(reptile_update(&omega, &theta, 0.0).unwrap(), omega);
    assert_eq!(reptile_update(&omega, &theta, 1.0).unwrap(), theta);
    let other = ParamVector::zeros(RegNetConfig::default().layout().into());
    assert!(reptile_update(&omega, &other, 0.5).is_err());
}

#[test]
fn one_episode_with_unit_step_equals_the_episode() {
    let net = perturbed_net(7);
    let ps = pairs(7, 3);
    let cfg = MetaConfig {
        total_inner_iterations: 2,
        beta_schedule: LinearDecay::new(1.0, 1e-5, 2).unwrap(),
        episode: episode_cfg(2, 1, AffineRanges::default()),
        seed: 7,
    };
    let (trained, log) = meta_train(&ps, &cfg, net.clone(), |_| {}).unwrap();

    let mut r = rng(7, Stream::Meta, 0);
    let pick = r.gen_range(0..ps.len());
    let ep = run_episode(&net, &ps[pick], &cfg.episode, &mut r).unwrap();
    assert_eq!(trained.params(), &ep.theta);
    assert_eq!(log.len(), 1);
    assert_eq!(log[0].pair_id, pick);
    assert_eq!(log[0].beta, 1.0);
    assert_eq!(log[0].cumulative_step, 2);
}

#[test]
fn meta_training_is_deterministic_and_logs_every_episode() {
    let ps = pairs(8, 3);
    let cfg = MetaConfig {
        total_inner_iterations: 6,
        beta_schedule: LinearDecay::new(0.5, 1e-5, 6).unwrap(),
        episode: episode_cfg(2, 1, AffineRanges::default()),
        seed: 8,
    };
    let mut seen = 0;
    let (a, log_a) = meta_train(&ps, &cfg, small_net(8), |_| seen += 1).unwrap();
    let (b, log_b) = meta_train(&ps, &cfg, small_net(8), |_| {}).unwrap();
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    assert_eq!(log_a.len(), 3);
    assert_eq!(seen, 3);
    let betas: Vec<f64> = log_a.iter().map(|r| r.beta).collect();
    assert!(betas.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn conventional_training_steps() {
    let ps = pairs(9, 1);
    let net = perturbed_net(9);
    let mut cfg = ConventionalConfig {
        iterations: 0,
        batch: 1,
        lr: 1e-3,
        augment: AffineRanges::none(),
        loss_weights: LossWeights::default(),
        seed: 9,
    };
    let (same, losses) = train_conventional(&ps, &cfg, net.clone(), |_, _| {}).unwrap();
    assert_eq!(same, net);
    assert!(losses.is_empty());

    cfg.iterations = 1;
    let (one, losses) = train_conventional(&ps, &cfg, net.clone(), |_, _| {}).unwrap();
    let (loss, grad) = loss_and_gradient(&net, net.params(), &ps[0].moving, &ps[0].fixed, cfg.loss_weights).unwrap();
    assert_eq!(losses, vec![loss]);
    assert_close(one.params(), &hand_adam_step(net.params(), &grad, 1e-3), 1e-6);
}

#[test]
fn classical_stationary_on_identical_images() {
    let p = &pairs(10, 1)[0];
    let cfg = ClassicalConfig {
        iterations: 20,
        ..Default::default()
    };
    let r = classical_register(&p.moving, &p.moving, &cfg).unwrap();
    assert!(r.ddf.is_zero());
    assert_eq!(r.losses.len(), 21);
    assert!(r.losses.iter().all(|&l| l == 0.0));

    let none = ClassicalConfig {
        iterations: 0,
        ..Default::default()
    };
    let r = classical_register(&p.moving, &p.fixed, &none).unwrap();
    assert!(r.ddf.is_zero());
    assert_eq!(r.losses.len(), 1);
}

#[test]
fn classical_with_a_larger_step_lowers_the_loss() {
    let p = &pairs(11, 1)[0];
    let cfg = ClassicalConfig {
        iterations: 50,
        lr: 2.0,
        ..Default::default()
    };
    let r = classical_register(&p.moving, &p.fixed, &cfg).unwrap();
    let last = *r.losses.last().unwrap();
    assert!(last < r.losses[0]);
    let direct = total_loss(&p.moving, &p.fixed, &r.ddf, cfg.loss_weights).unwrap();
    assert!((direct - last).abs() <= 1e-6 * last.abs().max(1e-3));
}

#[test]
fn tto_without_updates_is_the_plain_prediction() {
    let net = perturbed_net(12);
    let p = &pairs(12, 1)[0];
    let cfg = TtoConfig {
        updates: 0,
        ..Default::default()
    };
    let r = test_time_optimize(&net, p, &cfg, &mut rng(12, Stream::Evaluation, 0)).unwrap();
    assert_eq!(r.ddf, net.predict(&p.moving, &p.fixed).unwrap());
    assert_eq!(r.net, net);
    assert!(!r.diverged);
}

#[test]
fn tto_flags_divergence_and_keeps_last_finite_state() {
    let net = perturbed_net(13);
    let p = &pairs(13, 1)[0];
    // finite inputs whose squared difference overflows f32
    let mut data = p.fixed.data().to_vec();
    data[7] = 1e25;
    let bad = ImagePair::new(0, p.moving.clone(), p.fixed.with_data(data).unwrap()).unwrap();
    let r = test_time_optimize(&net, &bad, &TtoConfig::default(), &mut rng(13, Stream::Evaluation, 0)).unwrap();
    assert!(r.diverged);
    assert_eq!(r.net, net);
    assert!(r.losses.is_empty());
}

#[test]
fn tto_lowers_the_pair_loss_on_most_pairs() {
    let net = perturbed_net(14);
    let ps = pairs(14, 10);
    let cfg = TtoConfig {
        lr: 1e-3,
        ..Default::default()
    };
    let w = cfg.loss_weights;
    let improved = ps
        .iter()
        .filter(|p| {
            let before = total_loss(&p.moving, &p.fixed, &net.predict(&p.moving, &p.fixed).unwrap(), w).unwrap();
            let r = test_time_optimize(&net, p, &cfg, &mut rng(14, Stream::Evaluation, p.id as u64)).unwrap();
            total_loss(&p.moving, &p.fixed, &r.ddf, w).unwrap() <= before
        })
        .count();
    assert!(improved >= 8, "only {improved} of 10 pairs improved");
}
